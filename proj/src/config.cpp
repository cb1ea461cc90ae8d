#include "acs/config.hpp"

#include "acs/error.hpp"
#include "acs/image_io.hpp"
#include "acs/json_util.hpp"
#include "acs/rng.hpp"

#include <charconv>
#include <chrono>
#include <cmath>

namespace acs::config {

namespace {

using nlohmann::json;

constexpr std::uint64_t kTagPositive = 1;
constexpr std::uint64_t kTagNegative = 2;

const char* type_name(const json& j) {
  if (j.is_object()) return "object";
  if (j.is_array()) return "array";
  if (j.is_string()) return "string";
  if (j.is_boolean()) return "boolean";
  if (j.is_number()) return "number";
  return "null";
}

bool same_kind(const json& def, const json& val) {
  if (def.is_number()) return val.is_number();
  return std::string(type_name(def)) == type_name(val);
}

void merge_checked(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
      continue;
    }
    if (!same_kind(slot, it.value()))
      throw ConfigError("config key '" + key + "' expects " + type_name(slot) + ", got " + type_name(it.value()));
    if (slot.is_number_integer() || slot.is_number_unsigned()) {
      const double v = it.value().get<double>();
      if (v != std::floor(v)) throw ConfigError("config key '" + key + "' expects an integer");
    }
    slot = it.value();
  }
}

template <class T>
T get(const json& doc, const char* section, const char* key) {
  try {
    return doc.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + section + "." + key + "': " + e.what());
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

json default_document() {
  json train = adapter::to_json(adapter::TrainConfig{});
  train.erase("seed");
  train.erase("stages");
  train["embed_dim"] = 8;
  train["embed_scale"] = 2.0;

  json edit = edit::to_json(edit::EditConfig{});
  edit.erase("seed");
  edit.erase("alpha");

  const features::ConceptSpec spec;
  return {
      {"seed", 0},
      {"features",
       {{"name", spec.name},
        {"positive_label", spec.positive_label},
        {"negative_label", spec.negative_label},
        {"neutral_label", spec.neutral_label},
        {"dim", spec.dim},
        {"gap", spec.ground_truth_gap},
        {"noise_scale", spec.noise_scale},
        {"mean_scale", spec.mean_scale},
        {"height", spec.height},
        {"width", spec.width},
        {"samples", 20},
        {"stages", 10}}},
      {"axis", {{"K", 8}, {"ridge", -1.0}}},
      {"adapter", train},
      {"scene", {{"primitives", 100}, {"body_primitives", 5}}},
      {"encoder", {{"patch", 8}, {"gain", 1.0}}},
      {"edit", edit},
      {"target", {{"mode", "adapter"}, {"draws", 256}}},
      {"report",
       {{"gamma_sweep", {0.01, 0.05, 0.2, 1.0}},
        {"sweep_alphas", {-1.0, -0.5, 0.0, 0.5, 1.0}},
        {"lda_datasets", 50},
        {"recovery_seeds", 100}}},
      {"service", {{"max_alpha", 3.0}, {"frame_every", 1}, {"multi_session", false}, {"ui_dir", ""}}},
      {"paths", {{"features", ""}, {"axis", ""}, {"adapter", ""}, {"scene", ""}}},
  };
}

RunConfig from_json(const json& user) {
  RunConfig cfg;
  cfg.doc = default_document();
  merge_checked(cfg.doc, user, "");
  const json& d = cfg.doc;

  const json& seed = d.at("seed");
  require(seed.is_number_unsigned() || (seed.is_number_integer() && seed.get<std::int64_t>() >= 0),
          "config key 'seed' must be a non-negative integer");
  cfg.seed = seed.get<std::uint64_t>();

  cfg.spec = features::make_synthetic_spec(get<int>(d, "features", "dim"), cfg.seed, get<double>(d, "features", "gap"),
                                           get<double>(d, "features", "noise_scale"));
  cfg.spec.name = get<std::string>(d, "features", "name");
  cfg.spec.positive_label = get<std::string>(d, "features", "positive_label");
  cfg.spec.negative_label = get<std::string>(d, "features", "negative_label");
  cfg.spec.neutral_label = get<std::string>(d, "features", "neutral_label");
  cfg.spec.mean_scale = get<double>(d, "features", "mean_scale");
  cfg.spec.height = get<int>(d, "features", "height");
  cfg.spec.width = get<int>(d, "features", "width");
  try {
    cfg.spec.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("features: ") + e.what());
  }
  cfg.samples = get<int>(d, "features", "samples");
  cfg.stages = get<int>(d, "features", "stages");
  require(cfg.samples >= 1, "features.samples must be >= 1");
  require(cfg.stages >= 1, "features.stages must be >= 1");

  cfg.K = get<int>(d, "axis", "K");
  cfg.ridge = get<double>(d, "axis", "ridge");
  require(cfg.K >= 0 && cfg.K < cfg.spec.dim, "axis.K must be in [0, dim)");

  json train = d.at("adapter");
  cfg.embed_dim = train.at("embed_dim").get<int>();
  cfg.embed_scale = train.at("embed_scale").get<double>();
  require(cfg.embed_dim >= 1, "adapter.embed_dim must be >= 1");
  require(cfg.embed_scale > 0.0, "adapter.embed_scale must be > 0");
  train.erase("embed_dim");
  train.erase("embed_scale");
  train["seed"] = cfg.seed;
  train["stages"] = cfg.stages;
  cfg.train = adapter::train_config_from_json(train);

  cfg.scene_primitives = get<int>(d, "scene", "primitives");
  cfg.scene_body = get<int>(d, "scene", "body_primitives");
  require(cfg.scene_primitives >= 1, "scene.primitives must be >= 1");
  require(cfg.scene_body >= 0 && cfg.scene_body <= cfg.scene_primitives,
          "scene.body_primitives must be in [0, scene.primitives]");

  cfg.patch = get<int>(d, "encoder", "patch");
  cfg.encoder_gain = get<double>(d, "encoder", "gain");
  require(cfg.patch >= 1, "encoder.patch must be >= 1");
  require(cfg.encoder_gain > 0.0, "encoder.gain must be > 0");

  json edit = d.at("edit");
  edit["seed"] = cfg.seed;
  edit["alpha"] = 0.0;
  cfg.edit = edit::edit_config_from_json(edit);
  require(cfg.edit.views.height % cfg.patch == 0 && cfg.edit.views.width % cfg.patch == 0,
          "edit.views height and width must be multiples of encoder.patch");

  const std::string mode = get<std::string>(d, "target", "mode");
  if (mode == "adapter") cfg.target_mode = edit::TargetMode::adapter;
  else if (mode == "axis") cfg.target_mode = edit::TargetMode::axis;
  else throw ConfigError("target.mode must be 'adapter' or 'axis', got '" + mode + "'");
  cfg.target_draws = get<int>(d, "target", "draws");
  require(cfg.target_draws >= 1, "target.draws must be >= 1");

  cfg.gamma_sweep = get<std::vector<double>>(d, "report", "gamma_sweep");
  cfg.sweep_alphas = get<std::vector<double>>(d, "report", "sweep_alphas");
  cfg.lda_datasets = get<int>(d, "report", "lda_datasets");
  cfg.recovery_seeds = get<int>(d, "report", "recovery_seeds");
  for (double g : cfg.gamma_sweep) require(g > 0.0 && g <= 1.0, "report.gamma_sweep entries must be in (0, 1]");
  require(!cfg.sweep_alphas.empty(), "report.sweep_alphas must not be empty");
  require(cfg.lda_datasets >= 1 && cfg.recovery_seeds >= 1, "report dataset counts must be >= 1");

  cfg.max_alpha = get<double>(d, "service", "max_alpha");
  cfg.frame_every = get<int>(d, "service", "frame_every");
  cfg.multi_session = get<bool>(d, "service", "multi_session");
  cfg.ui_dir = get<std::string>(d, "service", "ui_dir");
  require(std::isfinite(cfg.max_alpha) && cfg.max_alpha > 0.0, "service.max_alpha must be finite and > 0");
  require(cfg.frame_every >= 1, "service.frame_every must be >= 1");

  cfg.features_dir = get<std::string>(d, "paths", "features");
  cfg.axis_path = get<std::string>(d, "paths", "axis");
  cfg.adapter_path = get<std::string>(d, "paths", "adapter");
  cfg.scene_path = get<std::string>(d, "paths", "scene");
  return cfg;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override key '" + path + "' has an empty component");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunConfig load(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
               const char* env_seed) {
  json user = json::object();
  if (file) {
    if (!std::filesystem::exists(*file)) throw IoError("config file not found: " + file->string());
    user = read_json_file(*file);
    if (!user.is_object()) throw ConfigError("config file " + file->string() + " must hold a JSON object");
  }
  for (const auto& o : overrides) apply_override(user, o);
  if (env_seed != nullptr && *env_seed != '\0') {
    const std::string s(env_seed);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw ConfigError("ACS_SEED must be a non-negative integer, got '" + s + "'");
    user["seed"] = v;
  }
  return from_json(user);
}

std::filesystem::path Layout::feature_file(int stage, features::Side side) const {
  return features_dir / ("stage_" + std::to_string(stage) + "_" + features::to_string(side) + ".acsf");
}

Layout layout(const RunConfig& cfg, const std::filesystem::path& out) {
  Layout l;
  l.out = out;
  l.features_dir = cfg.features_dir.empty() ? out / "features" : std::filesystem::path(cfg.features_dir);
  l.axis = cfg.axis_path.empty() ? out / "axis.json" : std::filesystem::path(cfg.axis_path);
  l.adapter = cfg.adapter_path.empty() ? out / "adapter.json" : std::filesystem::path(cfg.adapter_path);
  l.adapter_loss = out / "adapter_loss.jsonl";
  l.scene = cfg.scene_path;
  l.edited_scene = out / "edited_scene.json";
  l.trace = out / "edit_trace.jsonl";
  l.front_png = out / "edit_front.png";
  l.sweep_png = out / "sweep_strip.png";
  l.report = out / "report.json";
  return l;
}

StageSets generate_features(const RunConfig& cfg) {
  StageSets sets;
  for (int t = 1; t <= cfg.stages; ++t) {
    const auto st = static_cast<std::uint64_t>(t);
    sets.emplace(t, std::make_pair(features::synth_concept_sampler(cfg.spec, t, features::Side::positive, cfg.samples,
                                                                   derive_seed(cfg.seed, {kTagPositive, st})),
                                   features::synth_concept_sampler(cfg.spec, t, features::Side::negative, cfg.samples,
                                                                   derive_seed(cfg.seed, {kTagNegative, st}))));
  }
  return sets;
}

axis::ConceptAxisModel fit_axis(const RunConfig& cfg, const StageSets& sets) {
  return axis::fit_model(cfg.spec, sets, cfg.K, cfg.ridge);
}

adapter::ToyGenerator make_generator(const RunConfig& cfg) {
  return adapter::ToyGenerator(cfg.spec, cfg.stages, cfg.embed_dim, cfg.embed_scale);
}

adapter::TrainResult train(const RunConfig& cfg, const adapter::ToyGenerator& gen,
                           const axis::ConceptAxisModel& model) {
  return adapter::train_adapter(gen, model, cfg.train);
}

edit::LatentEncoder make_encoder(const RunConfig& cfg) {
  return edit::make_encoder(cfg.spec.dim, cfg.patch, cfg.patch, cfg.seed, cfg.encoder_gain);
}

splat::SplatScene source_scene(const RunConfig& cfg) {
  if (!cfg.scene_path.empty()) return splat::read_scene(cfg.scene_path);
  return edit::make_default_scene(cfg.seed, cfg.scene_primitives, cfg.scene_body);
}

std::vector<Eigen::VectorXd> targets(const RunConfig& cfg, const axis::ConceptAxisModel& model,
                                     const adapter::ToyGenerator& gen, const adapter::LowRankAdapter& ad,
                                     double alpha) {
  return edit::slider_target(model, &gen, &ad, alpha, cfg.target_mode, cfg.target_draws, cfg.seed);
}

namespace {

void check_exists(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::exists(p)) throw IoError(std::string("missing ") + what + " file: " + p.string());
}

void check_compatible(const RunConfig& cfg, const axis::ConceptAxisModel& model, const adapter::ToyGenerator& gen,
                      const adapter::LowRankAdapter& ad) {
  if (model.stage_count() != cfg.stages)
    throw ConfigError("axis model has " + std::to_string(model.stage_count()) + " stages, config expects " +
                      std::to_string(cfg.stages));
  if (ad.dim != gen.dim() || ad.input_dim != gen.input_dim() || ad.stages() != gen.stages())
    throw ConfigError("adapter shape does not match the generator built from the axis model");
}

}  // namespace

Artifacts load_artifacts(const RunConfig& cfg, const Layout& paths) {
  check_exists(paths.axis, "axis");
  check_exists(paths.adapter, "adapter");
  axis::ConceptAxisModel model = axis::read_axis_model(paths.axis);
  adapter::ToyGenerator gen(model.spec, cfg.stages, cfg.embed_dim, cfg.embed_scale);
  adapter::LowRankAdapter ad = adapter::read_adapter(paths.adapter);
  check_compatible(cfg, model, gen, ad);
  return {std::move(model), std::move(gen), std::move(ad)};
}

Artifacts load_or_build(const RunConfig& cfg, const Layout& paths) {
  axis::ConceptAxisModel model = std::filesystem::exists(paths.axis) ? axis::read_axis_model(paths.axis)
                                                                     : fit_axis(cfg, generate_features(cfg));
  adapter::ToyGenerator gen(model.spec, cfg.stages, cfg.embed_dim, cfg.embed_scale);
  adapter::LowRankAdapter ad = std::filesystem::exists(paths.adapter) ? adapter::read_adapter(paths.adapter)
                                                                      : train(cfg, gen, model).adapter;
  check_compatible(cfg, model, gen, ad);
  return {std::move(model), std::move(gen), std::move(ad)};
}

EditOutput run_edit(const RunConfig& cfg, const Artifacts& art, double alpha, const std::optional<Layout>& out) {
  if (!std::isfinite(alpha)) throw ConfigError("alpha must be finite");
  const splat::SplatScene scene = source_scene(cfg);
  const edit::LatentEncoder enc = make_encoder(cfg);
  if (enc.dim != art.model.dim()) throw ConfigError("encoder dimension does not match the axis model");
  const Eigen::VectorXd b = art.model.reference_axis();
  edit::EditConfig ecfg = cfg.edit;
  ecfg.alpha = alpha;
  const auto views = edit::evaluation_views(ecfg.views);

  EditOutput o;
  o.initial_coord = edit::concept_coordinate(scene, enc, b, views);
  const auto t0 = std::chrono::steady_clock::now();
  o.result = edit::edit_loop(scene, enc, b, targets(cfg, art.model, art.gen, art.adapter, alpha), ecfg);
  o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.final_coord = edit::concept_coordinate(o.result.scene, enc, b, views);

  if (out) {
    std::filesystem::create_directories(out->out);
    splat::write_scene(o.result.scene, out->edited_scene);
    write_text_file(out->trace, edit::trace_jsonl(o.result.trace));
    const splat::View front = splat::front_view(ecfg.views.height, ecfg.views.width);
    image::write_png(image::flatten_on_white(splat::render(o.result.scene, front)), out->front_png);
  }
  return o;
}

}  // namespace acs::config
