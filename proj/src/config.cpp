#include "seqsort/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "seqsort/error.hpp"
#include "seqsort/fsutil.hpp"

namespace seqsort::config {

namespace pt = boost::property_tree;
namespace fs = std::filesystem;

namespace {

std::string where(const std::string& section, const std::string& key) {
  return section.empty() ? key : section + "." + key;
}

double to_double(const std::string& v, const std::string& at) {
  double out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) fail(ErrorCode::ConfigError, at + ": expected a number, got '" + v + "'");
  return out;
}

std::int64_t to_int(const std::string& v, const std::string& at) {
  std::int64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) fail(ErrorCode::ConfigError, at + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& v, const std::string& at) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) fail(ErrorCode::ConfigError, at + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v, const std::string& at) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorCode::ConfigError, at + ": expected true/false, got '" + v + "'");
}

fs::path to_path(const std::string& v, const fs::path& base) {
  if (v.empty()) return {};
  fs::path p(v);
  return p.is_absolute() || base.empty() ? p : base / p;
}

using Setter = std::function<void(GlobalConfig&, const std::string&, const std::string&)>;
using Table = std::map<std::string, Setter>;

Table section_table(const std::string& section, const fs::path& base) {
  Table t;
  if (section.empty()) {
    t["taxonomy_version"] = [](GlobalConfig& c, const std::string& v, const std::string&) { c.taxonomy_version = v; };
    t["label_map_path"] = [base](GlobalConfig& c, const std::string& v, const std::string&) {
      c.label_map_path = to_path(v, base);
    };
  } else if (section == "data") {
    t["source"] = [base](GlobalConfig& c, const std::string& v, const std::string&) { c.data_source = to_path(v, base); };
    t["class_threshold"] = [](GlobalConfig& c, const std::string& v, const std::string& at) {
      c.class_threshold = static_cast<int>(to_int(v, at));
    };
  } else if (section == "split") {
    t["train_fraction"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.split.train_fraction = to_double(v, at); };
    t["val_fraction"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.split.val_fraction = to_double(v, at); };
    t["test_fraction"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.split.test_fraction = to_double(v, at); };
    t["seed"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.split.seed = to_u64(v, at); };
  } else if (section == "oversample") {
    t["class_max_ratio"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.oversample.class_max_ratio = to_double(v, at); };
    t["vendor_max_ratio"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.oversample.vendor_max_ratio = to_double(v, at); };
    t["seed"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.oversample.seed = to_u64(v, at); };
  } else if (section == "augment") {
    auto& a = t;
    a["noise_sigma_max"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.augment.noise_sigma_max = to_double(v, at); };
    a["gamma_min"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.augment.contrast_gamma_range.first = to_double(v, at); };
    a["gamma_max"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.augment.contrast_gamma_range.second = to_double(v, at); };
    a["rotation_max_deg"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.augment.rotation_max_deg = to_double(v, at); };
    a["scale_min"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.augment.scale_range.first = to_double(v, at); };
    a["scale_max"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.augment.scale_range.second = to_double(v, at); };
    a["translate_max_frac"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.augment.translate_max_frac = to_double(v, at); };
    a["deform_grid"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.augment.deform_grid = static_cast<int>(to_int(v, at)); };
    a["deform_max_px"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.augment.deform_max_px = to_double(v, at); };
    a["channel_shuffle"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.augment.channel_shuffle = to_bool(v, at); };
    a["seed"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.augment.seed = to_u64(v, at); };
  } else if (section == "train") {
    t["epochs"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.train.epochs = static_cast<int>(to_int(v, at)); };
    t["batch_size"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.train.batch_size = static_cast<int>(to_int(v, at)); };
    t["lr_min"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.train.lr.lr_min = to_double(v, at); };
    t["lr_max"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.train.lr.lr_max = to_double(v, at); };
    t["cycle_epochs"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.train.lr.cycle_epochs = static_cast<int>(to_int(v, at)); };
    t["seed"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.train.seed = to_u64(v, at); };
    t["val_every"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.train.val_every = static_cast<int>(to_int(v, at)); };
    t["input_size"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.train.input_size = static_cast<int>(to_int(v, at)); };
    t["checkpoint_dir"] = [base](GlobalConfig& c, const std::string& v, const std::string&) { c.train.checkpoint_dir = to_path(v, base); };
    t["verbose"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.train.verbose = to_bool(v, at); };
  } else if (section == "phantom") {
    t["studies_per_class"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.phantom.studies_per_class = static_cast<int>(to_int(v, at)); };
    t["slices_min"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.phantom.slices_per_series.first = static_cast<int>(to_int(v, at)); };
    t["slices_max"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.phantom.slices_per_series.second = static_cast<int>(to_int(v, at)); };
    t["rows"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.phantom.image_size.first = static_cast<int>(to_int(v, at)); };
    t["cols"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.phantom.image_size.second = static_cast<int>(to_int(v, at)); };
    t["seed"] = [](GlobalConfig& c, const std::string& v, const std::string& at) { c.phantom.seed = to_u64(v, at); };
    t["write_format"] = [](GlobalConfig& c, const std::string& v, const std::string&) {
      c.phantom.write_format = phantom::write_format_from_string(v);
    };
  } else {
    fail(ErrorCode::ConfigError, "unknown section [" + section + "]");
  }
  return t;
}

void apply(GlobalConfig& c, const std::string& section, const std::string& key, const std::string& value,
           const fs::path& base) {
  const Table t = section_table(section, base);
  auto it = t.find(key);
  if (it == t.end()) fail(ErrorCode::ConfigError, "unknown key '" + where(section, key) + "'");
  it->second(c, value, where(section, key));
}

}  // namespace

void GlobalConfig::validate() const {
  if (taxonomy_version != kTaxonomyVersion) {
    fail(ErrorCode::ConfigError, "taxonomy_version " + taxonomy_version + " is not supported (expected " +
                                     std::string(kTaxonomyVersion) + ")");
  }
  if (class_threshold < 1) fail(ErrorCode::ConfigError, "data.class_threshold must be >= 1");
  split.validate();
  oversample.validate();
  augment.validate();
  train.validate();
  phantom.validate();
}

labeling::LabelMap GlobalConfig::label_map() const {
  return label_map_path.empty() ? labeling::LabelMap::defaults() : labeling::LabelMap::load(label_map_path);
}

void GlobalConfig::override_seed(std::uint64_t seed) {
  split.seed = seed;
  oversample.seed = seed;
  augment.seed = seed;
  train.seed = seed;
  phantom.seed = seed;
  train.augment.seed = seed;
  train.oversample.seed = seed;
}

GlobalConfig parse(std::string_view text, const fs::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorCode::ConfigError, std::string("config syntax: ") + e.what());
  }
  GlobalConfig c;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      apply(c, "", name, node.data(), base_dir);
    } else if (name == "vendor_map") {
      std::vector<dicom::VendorMap::Entry> entries;
      for (const auto& [substring, v] : node) entries.push_back({substring, dicom::vendor_from_string(v.data())});
      c.vendor_map = dicom::VendorMap(std::move(entries));
    } else {
      for (const auto& [key, v] : node) apply(c, name, key, v.data(), base_dir);
    }
  }
  // TrainConfig carries its own copies of these two specs.
  c.train.augment = c.augment;
  c.train.oversample = c.oversample;
  c.validate();
  return c;
}

GlobalConfig load(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    fail(ErrorCode::ConfigError, "cannot read config " + path.string() + ": " + e.what());
  }
  return parse(text, path.parent_path());
}

}  // namespace seqsort::config
