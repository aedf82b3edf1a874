#include "selar/feature_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <unordered_set>
#include <variant>

#include <json.hpp>

#include "binary_io.hpp"

namespace selar {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::size_t require_positive(const json& doc, const char* key) {
  if (!doc.contains(key)) throw StoreError(std::string("manifest: missing field '") + key + "'");
  const auto& v = doc.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
    throw StoreError(std::string("manifest: field '") + key + "' must be a positive integer");
  }
  return v.get<std::size_t>();
}

std::string require_string(const json& doc, const char* key) {
  if (!doc.contains(key)) throw StoreError(std::string("manifest: missing field '") + key + "'");
  const auto& v = doc.at(key);
  if (!v.is_string()) {
    throw StoreError(std::string("manifest: field '") + key + "' must be a string");
  }
  return v.get<std::string>();
}

std::uintmax_t file_size_of(const fs::path& path, const char* field) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) {
    throw StoreError(std::string("manifest: file for '") + field + "' not found: " +
                     path.string());
  }
  const auto size = fs::file_size(path, ec);
  if (ec) throw StoreError("cannot stat " + path.string() + ": " + ec.message());
  return size;
}

std::vector<std::uint32_t> read_index_list(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc.at(key).is_array()) {
    throw StoreError(std::string("splits: missing list '") + key + "'");
  }
  std::vector<std::uint32_t> out;
  out.reserve(doc.at(key).size());
  for (const auto& v : doc.at(key)) {
    if (!v.is_number_unsigned() || v.get<std::uint64_t>() > UINT32_MAX) {
      throw StoreError(std::string("splits: list '") + key +
                       "' must contain non-negative integers");
    }
    out.push_back(v.get<std::uint32_t>());
  }
  return out;
}

void check_unique(std::span<const std::uint32_t> ids, std::size_t bound, const char* what) {
  std::vector<bool> seen(bound, false);
  for (const auto id : ids) {
    if (id >= bound) {
      throw StoreError(std::string("splits: ") + what + " entry " + std::to_string(id) +
                       " out of range [0, " + std::to_string(bound) + ")");
    }
    if (seen[id]) {
      throw StoreError(std::string("splits: duplicate entry ") + std::to_string(id) + " in " +
                       what);
    }
    seen[id] = true;
  }
}

std::string default_class_name(std::size_t c) {
  char name[32];
  std::snprintf(name, sizeof(name), "class_%03zu", c);
  return name;
}

// POSIX descriptor; pread keeps concurrent readers independent of a shared offset.
class FileHandle {
 public:
  explicit FileHandle(const fs::path& path) : fd_(::open(path.c_str(), O_RDONLY)) {
    if (fd_ < 0) {
      throw StoreError("cannot open " + path.string() + ": " + std::strerror(errno));
    }
  }
  ~FileHandle() {
    if (fd_ >= 0) ::close(fd_);
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;

  void read_at(std::size_t offset, std::span<std::byte> out) const {
    std::size_t done = 0;
    while (done < out.size()) {
      const auto n = ::pread(fd_, out.data() + done, out.size() - done,
                             static_cast<off_t>(offset + done));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw StoreError(std::string("read failed: ") + std::strerror(errno));
      }
      if (n == 0) throw StoreError("read failed: unexpected end of features blob");
      done += static_cast<std::size_t>(n);
    }
  }

 private:
  int fd_;
};

}  // namespace

struct FeatureSet::Backend {
  std::variant<FileHandle, std::vector<LocalFeatureMap>> source;

  explicit Backend(const fs::path& path) : source(std::in_place_type<FileHandle>, path) {}
  explicit Backend(std::vector<LocalFeatureMap> records)
      : source(std::in_place_type<std::vector<LocalFeatureMap>>, std::move(records)) {}
};

void validate_splits(const Splits& splits, std::span<const std::uint32_t> labels,
                     std::size_t num_classes) {
  const std::size_t n = labels.size();
  check_unique(splits.seen_class_ids, num_classes, "seen_class_ids");
  check_unique(splits.unseen_class_ids, num_classes, "unseen_class_ids");
  check_unique(splits.train_indices, n, "train_indices");
  check_unique(splits.test_seen_indices, n, "test_seen_indices");
  check_unique(splits.test_unseen_indices, n, "test_unseen_indices");

  std::vector<int> role(num_classes, 0);  // 1 seen, 2 unseen
  for (const auto c : splits.seen_class_ids) role[c] = 1;
  for (const auto c : splits.unseen_class_ids) {
    if (role[c] == 1) {
      throw StoreError("splits: class " + std::to_string(c) + " is both seen and unseen");
    }
    role[c] = 2;
  }

  auto check_labels = [&](std::span<const std::uint32_t> indices, int expected,
                          const char* list) {
    for (const auto i : indices) {
      const auto y = labels[i];
      if (y >= num_classes || role[y] != expected) {
        throw StoreError(std::string("splits: image ") + std::to_string(i) + " in " + list +
                         " has label " + std::to_string(y) + " which is not " +
                         (expected == 1 ? "a seen" : "an unseen") + " class");
      }
    }
  };
  check_labels(splits.train_indices, 1, "train_indices");
  check_labels(splits.test_seen_indices, 1, "test_seen_indices");
  check_labels(splits.test_unseen_indices, 2, "test_unseen_indices");
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw StoreError("manifest not found: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw StoreError("manifest: malformed JSON in " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw StoreError("manifest: top level must be an object");

  Manifest m;
  m.root = path.parent_path();
  m.dataset_name = require_string(doc, "dataset_name");
  m.spatial_size = require_positive(doc, "M");
  m.feature_depth = require_positive(doc, "D");
  m.num_attributes = require_positive(doc, "L");
  m.num_classes = require_positive(doc, "C");
  if (require_string(doc, "dtype") != kElementType) {
    throw StoreError("manifest: field 'dtype' must be \"f32le\"");
  }
  if (!doc.contains("class_names") || !doc.at("class_names").is_array()) {
    throw StoreError("manifest: missing field 'class_names'");
  }
  for (const auto& name : doc.at("class_names")) {
    if (!name.is_string()) throw StoreError("manifest: field 'class_names' must hold strings");
    m.class_names.push_back(name.get<std::string>());
  }
  if (m.class_names.size() != m.num_classes) {
    throw StoreError("manifest: class_names length mismatch (" +
                     std::to_string(m.class_names.size()) + " names, C=" +
                     std::to_string(m.num_classes) + ")");
  }
  m.features_path = require_string(doc, "features_path");
  m.labels_path = require_string(doc, "labels_path");
  m.attributes_path = require_string(doc, "attributes_path");
  m.splits_path = require_string(doc, "splits_path");

  const auto blob = file_size_of(m.resolve(m.features_path), "features_path");
  if (blob % m.record_bytes() != 0) {
    throw StoreError("manifest: features_path blob size not a multiple of record size (" +
                     std::to_string(blob) + " bytes, record " +
                     std::to_string(m.record_bytes()) + " bytes)");
  }
  m.record_count = blob / m.record_bytes();
  if (m.record_count == 0) throw StoreError("manifest: empty dataset");

  const auto label_bytes = file_size_of(m.resolve(m.labels_path), "labels_path");
  if (label_bytes != m.record_count * sizeof(std::uint32_t)) {
    throw StoreError("manifest: labels_path holds " + std::to_string(label_bytes) +
                     " bytes, expected " +
                     std::to_string(m.record_count * sizeof(std::uint32_t)));
  }
  const auto attr_bytes = file_size_of(m.resolve(m.attributes_path), "attributes_path");
  if (attr_bytes != m.num_classes * m.num_attributes * sizeof(float)) {
    throw StoreError("manifest: attributes_path holds " + std::to_string(attr_bytes) +
                     " bytes, expected " +
                     std::to_string(m.num_classes * m.num_attributes * sizeof(float)));
  }
  file_size_of(m.resolve(m.splits_path), "splits_path");
  return m;
}

FeatureSet FeatureSet::open(const Manifest& manifest) {
  FeatureSet set;
  set.manifest_ = manifest;
  detail::BinaryReader labels(manifest.resolve(manifest.labels_path));
  set.labels_ = labels.get_all<std::uint32_t>(manifest.record_count);
  for (std::size_t i = 0; i < set.labels_.size(); ++i) {
    if (set.labels_[i] >= manifest.num_classes) {
      throw StoreError("labels: record " + std::to_string(i) + " has label " +
                       std::to_string(set.labels_[i]) + " >= C");
    }
  }
  set.backend_ = std::make_shared<const Backend>(manifest.resolve(manifest.features_path));
  return set;
}

FeatureSet FeatureSet::from_memory(Manifest manifest, std::vector<LocalFeatureMap> records,
                                   std::vector<std::uint32_t> labels) {
  if (records.size() != labels.size()) {
    throw std::invalid_argument("FeatureSet: record and label counts differ");
  }
  for (const auto& r : records) {
    if (r.side() != manifest.spatial_size || r.depth() != manifest.feature_depth) {
      throw std::invalid_argument("FeatureSet: record shape does not match manifest");
    }
  }
  manifest.record_count = records.size();
  FeatureSet set;
  set.manifest_ = std::move(manifest);
  set.labels_ = std::move(labels);
  set.backend_ = std::make_shared<const Backend>(std::move(records));
  return set;
}

LocalFeatureMap FeatureSet::get(std::size_t index) const {
  if (index >= size()) {
    throw std::out_of_range("FeatureSet: index " + std::to_string(index) + " out of range [0, " +
                            std::to_string(size()) + ")");
  }
  if (const auto* memory = std::get_if<std::vector<LocalFeatureMap>>(&backend_->source)) {
    return (*memory)[index];
  }
  const auto& file = std::get<FileHandle>(backend_->source);
  std::vector<float> values(manifest_.record_floats());
  file.read_at(index * manifest_.record_bytes(), std::as_writable_bytes(std::span(values)));
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : values) v = detail::from_little(v);
  }
  return LocalFeatureMap(manifest_.spatial_size, manifest_.feature_depth, std::move(values));
}

std::uint32_t FeatureSet::label(std::size_t index) const {
  if (index >= size()) {
    throw std::out_of_range("FeatureSet: label index " + std::to_string(index) +
                            " out of range");
  }
  return labels_[index];
}

AttributeMatrix load_attributes(const Manifest& manifest) {
  detail::BinaryReader in(manifest.resolve(manifest.attributes_path));
  return AttributeMatrix(manifest.num_classes, manifest.num_attributes,
                         in.get_all<float>(manifest.num_classes * manifest.num_attributes));
}

Splits load_splits(const Manifest& manifest) {
  const auto path = manifest.resolve(manifest.splits_path);
  std::ifstream in(path);
  if (!in) throw StoreError("splits not found: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw StoreError("splits: malformed JSON: " + std::string(e.what()));
  }
  Splits s;
  s.seen_class_ids = read_index_list(doc, "seen_class_ids");
  s.unseen_class_ids = read_index_list(doc, "unseen_class_ids");
  s.train_indices = read_index_list(doc, "train_indices");
  s.test_seen_indices = read_index_list(doc, "test_seen_indices");
  s.test_unseen_indices = read_index_list(doc, "test_unseen_indices");
  return s;
}

Store open_store(const fs::path& dir) {
  Store store;
  store.manifest = load_manifest(dir / kManifestFileName);
  store.features = FeatureSet::open(store.manifest);
  store.attributes = load_attributes(store.manifest);
  store.splits = load_splits(store.manifest);
  validate_splits(store.splits, store.features.labels(), store.manifest.num_classes);
  return store;
}

Store validate_store(const fs::path& dir) {
  Store store = open_store(dir);
  for (std::size_t c = 0; c < store.attributes.rows(); ++c) {
    const auto row = store.attributes.row(c);
    if (!all_finite(row)) {
      throw StoreError("attributes: row " + std::to_string(c) + " has non-finite entries");
    }
    if (std::all_of(row.begin(), row.end(), [](float v) { return v == 0.0f; })) {
      throw StoreError("attributes: row of class " + std::to_string(c) + " (" +
                       store.manifest.class_names[c] + ") is all zeros");
    }
  }
  for (std::size_t i = 0; i < store.features.size(); ++i) {
    if (!all_finite(store.features.get(i).data())) {
      throw StoreError("features: record " + std::to_string(i) + " has non-finite values");
    }
  }
  return store;
}

Manifest write_store(const fs::path& dir, std::span<const LocalFeatureMap> features,
                     std::span<const std::uint32_t> labels, const AttributeMatrix& attributes,
                     const Splits& splits, const StoreInfo& info) {
  if (features.empty()) throw StoreError("write_store: empty dataset");
  if (labels.size() != features.size()) {
    throw StoreError("write_store: " + std::to_string(features.size()) + " records but " +
                     std::to_string(labels.size()) + " labels");
  }
  const auto side = features.front().side();
  const auto depth = features.front().depth();
  if (side == 0 || depth == 0) throw StoreError("write_store: zero-sized records");
  for (const auto& f : features) {
    if (f.side() != side || f.depth() != depth) {
      throw StoreError("write_store: inconsistent record shapes");
    }
  }
  if (attributes.rows() == 0 || attributes.cols() == 0) {
    throw StoreError("write_store: empty attribute matrix");
  }
  const auto num_classes = attributes.rows();
  for (const auto y : labels) {
    if (y >= num_classes) {
      throw StoreError("write_store: label " + std::to_string(y) + " >= C");
    }
  }
  validate_splits(splits, labels, num_classes);

  Manifest m;
  m.dataset_name = info.dataset_name;
  m.spatial_size = side;
  m.feature_depth = depth;
  m.num_attributes = attributes.cols();
  m.num_classes = num_classes;
  if (info.class_names.empty()) {
    for (std::size_t c = 0; c < num_classes; ++c) m.class_names.push_back(default_class_name(c));
  } else {
    if (info.class_names.size() != num_classes) {
      throw StoreError("write_store: class_names length mismatch");
    }
    m.class_names = info.class_names;
  }

  fs::create_directories(dir);
  m.root = dir;

  detail::BinaryWriter blob(m.resolve(m.features_path));
  for (const auto& f : features) blob.put_all(f.data());
  blob.close();

  detail::BinaryWriter label_out(m.resolve(m.labels_path));
  label_out.put_all(labels);
  label_out.close();

  detail::BinaryWriter attr_out(m.resolve(m.attributes_path));
  attr_out.put_all(attributes.data());
  attr_out.close();

  json split_doc;
  split_doc["seen_class_ids"] = splits.seen_class_ids;
  split_doc["unseen_class_ids"] = splits.unseen_class_ids;
  split_doc["train_indices"] = splits.train_indices;
  split_doc["test_seen_indices"] = splits.test_seen_indices;
  split_doc["test_unseen_indices"] = splits.test_unseen_indices;
  {
    std::ofstream out(m.resolve(m.splits_path));
    out << split_doc.dump() << '\n';
    if (!out) throw StoreError("write_store: cannot write splits");
  }

  json doc;
  doc["dataset_name"] = m.dataset_name;
  doc["M"] = m.spatial_size;
  doc["D"] = m.feature_depth;
  doc["L"] = m.num_attributes;
  doc["C"] = m.num_classes;
  doc["class_names"] = m.class_names;
  doc["features_path"] = m.features_path;
  doc["labels_path"] = m.labels_path;
  doc["attributes_path"] = m.attributes_path;
  doc["splits_path"] = m.splits_path;
  doc["dtype"] = kElementType;
  {
    std::ofstream out(dir / kManifestFileName);
    out << doc.dump(2) << '\n';
    if (!out) throw StoreError("write_store: cannot write manifest");
  }
  return load_manifest(dir / kManifestFileName);
}

FeatureSet SyntheticDataset::feature_set(const std::string& dataset_name) const {
  Manifest m;
  m.dataset_name = dataset_name;
  m.spatial_size = spec.spatial_size;
  m.feature_depth = spec.feature_depth;
  m.num_attributes = spec.num_attributes;
  m.num_classes = spec.num_classes;
  for (std::size_t c = 0; c < spec.num_classes; ++c) m.class_names.push_back(default_class_name(c));
  return FeatureSet::from_memory(std::move(m), features, labels);
}

}  // namespace selar
