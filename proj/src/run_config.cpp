#include "mkd/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mkd/rng.hpp"

namespace mkd {

using nlohmann::json;

namespace {

struct TypeMismatch {};

/// Reads fields of one JSON object, remembering which keys were consumed so
/// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config: '" + where() + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = convert<T>(*it);
    } catch (const TypeMismatch&) {
      throw ValidationError("config field '" + field(key) + "': wrong type");
    } catch (const json::exception&) {
      throw ValidationError("config field '" + field(key) + "': wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ValidationError("config: unknown key '" + field(it.key().c_str()) + "'");
      }
    }
  }

 private:
  template <typename T>
  static T convert(const json& v) {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw TypeMismatch{};
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) throw TypeMismatch{};
      return v.get<int>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw TypeMismatch{};
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw TypeMismatch{};
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw TypeMismatch{};
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::optional<double>>) {
      if (v.is_null()) return std::nullopt;
      return convert<double>(v);
    } else {
      // std::array<int|double, N>
      if (!v.is_array() || v.size() != std::tuple_size_v<T>) {
        throw TypeMismatch{};
      }
      T out{};
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = convert<typename T::value_type>(v[i]);
      return out;
    }
  }

  std::string where() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json train_to_json(const TrainConfig& c) {
  return {{"gamma", c.gamma},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"lambda0", c.lambda0},
          {"tau", c.tau ? json(*c.tau) : json(nullptr)},
          {"tau_on_ss", c.tau_on_ss},
          {"lr0", c.lr0},
          {"lr_power", c.lr_power},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"iters_max", c.iters_max},
          {"crop_height", c.crop_height},
          {"crop_width", c.crop_width},
          {"batch_labeled", c.batch_labeled},
          {"batch_unlabeled", c.batch_unlabeled},
          {"num_classes", c.num_classes},
          {"seed", c.seed}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  ObjectReader r(j, "train");
  r.read("gamma", c.gamma);
  r.read("alpha", c.alpha);
  r.read("beta", c.beta);
  r.read("lambda0", c.lambda0);
  r.read("tau", c.tau);
  r.read("tau_on_ss", c.tau_on_ss);
  r.read("lr0", c.lr0);
  r.read("lr_power", c.lr_power);
  r.read("momentum", c.momentum);
  r.read("weight_decay", c.weight_decay);
  r.read("iters_max", c.iters_max);
  r.read("crop_height", c.crop_height);
  r.read("crop_width", c.crop_width);
  r.read("batch_labeled", c.batch_labeled);
  r.read("batch_unlabeled", c.batch_unlabeled);
  r.read("num_classes", c.num_classes);
  r.read("seed", c.seed);
  r.finish();
  return c;
}

json arch_to_json(const ArchConfig& a) {
  return {{"in_channels", a.in_channels},
          {"widths", a.widths},
          {"feature_dim", a.feature_dim},
          {"bn_momentum", a.bn_momentum},
          {"bn_eps", a.bn_eps}};
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  ObjectReader r(j, "arch");
  r.read("in_channels", a.in_channels);
  r.read("widths", a.widths);
  r.read("feature_dim", a.feature_dim);
  r.read("bn_momentum", a.bn_momentum);
  r.read("bn_eps", a.bn_eps);
  r.finish();
  return a;
}

json augment_to_json(const AugmentConfig& a) {
  const StrongAugConfig& s = a.strong;
  return {{"flip_prob", a.flip_prob},
          {"scale_min", a.scale_min},
          {"scale_max", a.scale_max},
          {"cutmix_beta_a", a.cutmix_beta_a},
          {"cutmix_beta_b", a.cutmix_beta_b},
          {"strong",
           {{"brightness_min", s.brightness_min},
            {"brightness_max", s.brightness_max},
            {"contrast_min", s.contrast_min},
            {"contrast_max", s.contrast_max},
            {"saturation_min", s.saturation_min},
            {"saturation_max", s.saturation_max},
            {"hue_min", s.hue_min},
            {"hue_max", s.hue_max},
            {"blur_sigma_min", s.blur_sigma_min},
            {"blur_sigma_max", s.blur_sigma_max},
            {"solarize_min", s.solarize_min},
            {"solarize_max", s.solarize_max}}}};
}

AugmentConfig augment_from_json(const json& j) {
  AugmentConfig a;
  ObjectReader r(j, "augment");
  r.read("flip_prob", a.flip_prob);
  r.read("scale_min", a.scale_min);
  r.read("scale_max", a.scale_max);
  r.read("cutmix_beta_a", a.cutmix_beta_a);
  r.read("cutmix_beta_b", a.cutmix_beta_b);
  if (const json* s = r.child("strong")) {
    StrongAugConfig& o = a.strong;
    ObjectReader rs(*s, "augment.strong");
    rs.read("brightness_min", o.brightness_min);
    rs.read("brightness_max", o.brightness_max);
    rs.read("contrast_min", o.contrast_min);
    rs.read("contrast_max", o.contrast_max);
    rs.read("saturation_min", o.saturation_min);
    rs.read("saturation_max", o.saturation_max);
    rs.read("hue_min", o.hue_min);
    rs.read("hue_max", o.hue_max);
    rs.read("blur_sigma_min", o.blur_sigma_min);
    rs.read("blur_sigma_max", o.blur_sigma_max);
    rs.read("solarize_min", o.solarize_min);
    rs.read("solarize_max", o.solarize_max);
    rs.finish();
  }
  r.finish();
  return a;
}

void validate_range(const char* name, double lo, double hi, bool positive = false) {
  if (!(lo <= hi) || (positive && lo <= 0)) {
    throw ValidationError(std::string("config field 'augment.") + name + "': invalid range");
  }
}

void validate_augment(const AugmentConfig& a) {
  if (!(a.flip_prob >= 0 && a.flip_prob <= 1)) {
    throw ValidationError("config field 'augment.flip_prob': must lie in [0, 1]");
  }
  validate_range("scale", a.scale_min, a.scale_max, true);
  if (!(a.cutmix_beta_a > 0 && a.cutmix_beta_b > 0)) {
    throw ValidationError("config field 'augment.cutmix_beta': parameters must be > 0");
  }
  const StrongAugConfig& s = a.strong;
  validate_range("strong.brightness", s.brightness_min, s.brightness_max, true);
  validate_range("strong.contrast", s.contrast_min, s.contrast_max, true);
  validate_range("strong.saturation", s.saturation_min, s.saturation_max);
  validate_range("strong.hue", s.hue_min, s.hue_max);
  validate_range("strong.blur_sigma", s.blur_sigma_min, s.blur_sigma_max, true);
  validate_range("strong.solarize", s.solarize_min, s.solarize_max);
}

std::string shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::kRectangle: return "rectangle";
    case ShapeKind::kEllipse: return "ellipse";
    case ShapeKind::kTriangle: return "triangle";
  }
  return "rectangle";
}

ShapeKind shape_from_name(const std::string& s) {
  if (s == "rectangle") return ShapeKind::kRectangle;
  if (s == "ellipse") return ShapeKind::kEllipse;
  if (s == "triangle") return ShapeKind::kTriangle;
  throw ValidationError("config field 'classes.shape': unknown shape '" + s + "'");
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: malformed JSON: ") + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

RunConfig finalize_run_config(RunConfig cfg) {
  validate_config(cfg.train);
  cfg.augment.crop_height = cfg.train.crop_height;
  cfg.augment.crop_width = cfg.train.crop_width;
  cfg.arch.num_classes = cfg.train.num_classes;
  validate_arch(cfg.arch);
  validate_augment(cfg.augment);
  if (cfg.train.crop_height % kInputGranularity || cfg.train.crop_width % kInputGranularity) {
    throw ValidationError("config field 'train.crop_height/crop_width': must be multiples of " +
                          std::to_string(kInputGranularity));
  }
  if (cfg.covariance == CovarianceKind::kFull && cfg.arch.feature_dim > kMaxFullCovarianceDim) {
    throw ValidationError("config field 'covariance': full covariance needs feature_dim <= " +
                          std::to_string(kMaxFullCovarianceDim));
  }
  if (cfg.checkpoint_interval < 0) {
    throw ValidationError("config field 'checkpoint_interval': must be >= 0");
  }
  if (cfg.eval_interval < 0) throw ValidationError("config field 'eval_interval': must be >= 0");
  if (cfg.data.denominator < 0) {
    throw ValidationError("config field 'data.denominator': must be >= 0");
  }
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j = {{"train", train_to_json(cfg.train)},
            {"arch", arch_to_json(cfg.arch)},
            {"augment", augment_to_json(cfg.augment)},
            {"covariance", cfg.covariance == CovarianceKind::kFull ? "full" : "diagonal"},
            {"data",
             {{"train_images", cfg.data.train_images},
              {"train_labels", cfg.data.train_labels},
              {"manifest", cfg.data.manifest},
              {"denominator", cfg.data.denominator},
              {"split_seed", cfg.data.split_seed},
              {"val_images", cfg.data.val_images},
              {"val_labels", cfg.data.val_labels}}},
            {"checkpoint_interval", cfg.checkpoint_interval},
            {"eval_interval", cfg.eval_interval},
            {"output_dir", cfg.output_dir}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  const json j = parse(text);
  RunConfig cfg;
  ObjectReader r(j, "");
  if (const json* t = r.child("train")) cfg.train = train_from_json(*t);
  if (const json* a = r.child("arch")) cfg.arch = arch_from_json(*a);
  if (const json* a = r.child("augment")) cfg.augment = augment_from_json(*a);
  std::string cov = "diagonal";
  r.read("covariance", cov);
  if (cov == "full") {
    cfg.covariance = CovarianceKind::kFull;
  } else if (cov != "diagonal") {
    throw ValidationError("config field 'covariance': expected 'diagonal' or 'full'");
  }
  if (const json* d = r.child("data")) {
    ObjectReader rd(*d, "data");
    rd.read("train_images", cfg.data.train_images);
    rd.read("train_labels", cfg.data.train_labels);
    rd.read("manifest", cfg.data.manifest);
    rd.read("denominator", cfg.data.denominator);
    rd.read("split_seed", cfg.data.split_seed);
    rd.read("val_images", cfg.data.val_images);
    rd.read("val_labels", cfg.data.val_labels);
    rd.finish();
  }
  r.read("checkpoint_interval", cfg.checkpoint_interval);
  r.read("eval_interval", cfg.eval_interval);
  r.read("output_dir", cfg.output_dir);
  r.finish();
  return finalize_run_config(cfg);
}

RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_file(path)); }

void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write config '" + path + "'");
  os << run_config_to_json(cfg);
}

std::uint64_t trajectory_hash(const RunConfig& cfg) {
  const json j = {{"train", train_to_json(cfg.train)},
                  {"arch", arch_to_json(cfg.arch)},
                  {"augment", augment_to_json(cfg.augment)},
                  {"covariance", cfg.covariance == CovarianceKind::kFull ? "full" : "diagonal"}};
  return fnv1a(j.dump());
}

std::string scene_config_to_json(const SyntheticSceneConfig& cfg) {
  json classes = json::array();
  for (const auto& c : cfg.classes) {
    classes.push_back(
        {{"color_mean", c.color_mean}, {"color_std", c.color_std}, {"shape", shape_name(c.shape)}});
  }
  const json j = {{"height", cfg.height},
                  {"width", cfg.width},
                  {"num_classes", cfg.num_classes},
                  {"min_shapes", cfg.min_shapes},
                  {"max_shapes", cfg.max_shapes},
                  {"min_size", cfg.min_size},
                  {"max_size", cfg.max_size},
                  {"background_mean", cfg.background_mean},
                  {"background_std", cfg.background_std},
                  {"texture_amplitude", cfg.texture_amplitude},
                  {"noise_std", cfg.noise_std},
                  {"classes", classes},
                  {"seed", cfg.seed}};
  return j.dump(2) + "\n";
}

SyntheticSceneConfig scene_config_from_json(const std::string& text) {
  const json j = parse(text);
  SyntheticSceneConfig cfg;
  ObjectReader r(j, "");
  r.read("num_classes", cfg.num_classes);
  r.read("seed", cfg.seed);
  cfg.classes = default_scene_config(cfg.num_classes, cfg.seed).classes;
  r.read("height", cfg.height);
  r.read("width", cfg.width);
  r.read("min_shapes", cfg.min_shapes);
  r.read("max_shapes", cfg.max_shapes);
  r.read("min_size", cfg.min_size);
  r.read("max_size", cfg.max_size);
  r.read("background_mean", cfg.background_mean);
  r.read("background_std", cfg.background_std);
  r.read("texture_amplitude", cfg.texture_amplitude);
  r.read("noise_std", cfg.noise_std);
  if (const json* cl = r.child("classes")) {
    if (!cl->is_array()) throw ValidationError("config field 'classes': must be an array");
    cfg.classes.clear();
    for (std::size_t i = 0; i < cl->size(); ++i) {
      ClassAppearance a;
      std::string shape = shape_name(a.shape);
      ObjectReader rc((*cl)[i], "classes[" + std::to_string(i) + "]");
      rc.read("color_mean", a.color_mean);
      rc.read("color_std", a.color_std);
      rc.read("shape", shape);
      rc.finish();
      a.shape = shape_from_name(shape);
      cfg.classes.push_back(a);
    }
  }
  r.finish();
  validate_scene_config(cfg);
  return cfg;
}

SyntheticSceneConfig load_scene_config(const std::string& path) {
  return scene_config_from_json(read_file(path));
}

}  // namespace mkd
