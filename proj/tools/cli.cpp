#include "cli.hpp"

#include "acs/config.hpp"
#include "acs/error.hpp"
#include "acs/image_io.hpp"
#include "acs/json_util.hpp"
#include "acs/report.hpp"
#include "acs/service.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <thread>

namespace acs::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::atomic<bool> g_interrupted{false};

struct report_failure {};

void on_signal(int) { g_interrupted = true; }

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string out = "out";
  double alpha = 0.0;
  bool sweep = false;
  int port = 8080;
  std::string host = "127.0.0.1";
};

config::RunConfig load_config(const Options& o) {
  std::optional<fs::path> file;
  if (!o.config.empty()) file = o.config;
  return config::load(file, o.sets, std::getenv("ACS_SEED"));
}

void print(std::ostream& out, const json& j) { out << j.dump() << "\n"; }

std::vector<image::Series> trace_series(const std::vector<edit::TraceEntry>& trace, bool loss) {
  image::Series s;
  for (const auto& e : trace) {
    s.x.push_back(e.step);
    s.y.push_back(loss ? e.loss_sds : e.coord);
  }
  if (loss) s.color = {0.8, 0.2, 0.1};
  return {s};
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  const auto paths = config::layout(cfg, o.out);
  fs::create_directories(paths.features_dir);
  const auto sets = config::generate_features(cfg);
  int files = 0;
  for (const auto& [t, pair] : sets) {
    features::write_feature_file(pair.first, paths.feature_file(t, features::Side::positive));
    features::write_feature_file(pair.second, paths.feature_file(t, features::Side::negative));
    files += 2;
  }
  print(out, {{"command", "gen-data"}, {"dir", paths.features_dir.string()}, {"files", files},
              {"stages", cfg.stages}, {"samples", cfg.samples}, {"dim", cfg.spec.dim}});
  return kOk;
}

int cmd_fit_axis(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  const auto paths = config::layout(cfg, o.out);
  config::StageSets sets;
  for (int t = 1; t <= cfg.stages; ++t) {
    const fs::path p = paths.feature_file(t, features::Side::positive);
    const fs::path n = paths.feature_file(t, features::Side::negative);
    for (const auto& f : {p, n})
      if (!fs::exists(f)) throw IoError("missing feature file: " + f.string());
    sets.emplace(t, std::make_pair(features::read_feature_file(p), features::read_feature_file(n)));
  }
  const auto model = config::fit_axis(cfg, sets);
  fs::create_directories(paths.axis.parent_path().empty() ? fs::path(".") : paths.axis.parent_path());
  axis::write_axis_model(model, paths.axis);
  double worst = 1.0, mean = 0.0;
  for (const auto& st : model.stages) {
    const double a = std::abs(st.axis.b_c.dot(*model.spec.ground_truth_axis));
    worst = std::min(worst, a);
    mean += a / model.stage_count();
  }
  print(out, {{"command", "fit-axis"},
              {"axis", paths.axis.string()},
              {"stages", model.stage_count()},
              {"K", model.K},
              {"recovery_min", worst},
              {"recovery_mean", mean}});
  return kOk;
}

int cmd_train_adapter(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  const auto paths = config::layout(cfg, o.out);
  if (!fs::exists(paths.axis)) throw IoError("missing axis file: " + paths.axis.string());
  const auto model = axis::read_axis_model(paths.axis);
  const adapter::ToyGenerator gen(model.spec, cfg.stages, cfg.embed_dim, cfg.embed_scale);
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = config::train(cfg, gen, model);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(o.out);
  adapter::write_adapter(res.adapter, paths.adapter);
  std::string lines;
  image::Series total;
  for (const auto& s : res.trace) {
    nlohmann::ordered_json j;
    j["step"] = s.step;
    j["stage"] = s.stage;
    j["alpha"] = s.alpha;
    j["sliding"] = s.sliding;
    j["preserving"] = s.preserving;
    j["total"] = s.total;
    lines += j.dump() + "\n";
    total.x.push_back(s.step);
    total.y.push_back(s.total);
  }
  write_text_file(paths.adapter_loss, lines);
  image::write_png(image::line_plot({total}), fs::path(o.out) / "adapter_loss.png");

  json coords = json::array();
  for (double a : {-1.0, -0.5, 0.0, 0.5, 1.0})
    coords.push_back(report::slider_coordinate(model, gen, res.adapter, a, cfg.target_draws, cfg.seed));
  print(out, {{"command", "train-adapter"},
              {"adapter", paths.adapter.string()},
              {"steps", cfg.train.steps},
              {"seconds", secs},
              {"slider_coordinate", coords}});
  return kOk;
}

int cmd_edit(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  const auto paths = config::layout(cfg, o.out);
  const auto art = config::load_artifacts(cfg, paths);
  const auto res = config::run_edit(cfg, art, o.alpha, paths);
  image::write_png(image::line_plot(trace_series(res.result.trace, false)), fs::path(o.out) / "edit_coord.png");
  image::write_png(image::line_plot(trace_series(res.result.trace, true)), fs::path(o.out) / "edit_loss.png");

  json summary = {{"command", "edit"},
                  {"alpha", o.alpha},
                  {"steps", res.result.trace.size()},
                  {"initial_coord", res.initial_coord},
                  {"final_coord", res.final_coord},
                  {"primitives", res.result.scene.size()},
                  {"selected", res.result.scene.selected_count()},
                  {"trace", paths.trace.string()}};

  if (o.sweep) {
    std::vector<splat::Image> strip;
    json sweep = json::array();
    const splat::View front = splat::front_view(cfg.edit.views.height, cfg.edit.views.width);
    for (double a : cfg.sweep_alphas) {
      const auto r = a == o.alpha ? res : config::run_edit(cfg, art, a);
      strip.push_back(image::flatten_on_white(splat::render(r.result.scene, front)));
      sweep.push_back({{"alpha", a}, {"final_coord", r.final_coord}});
    }
    image::write_png(image::hstack(strip), paths.sweep_png);
    write_text_file(fs::path(o.out) / "sweep.json", json{{"sweep", sweep}}.dump(2) + "\n");
    summary["sweep"] = sweep;
    summary["strip"] = paths.sweep_png.string();
  }
  print(out, summary);
  return kOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  const auto paths = config::layout(cfg, o.out);
  auto art = config::load_or_build(cfg, paths);
  fs::create_directories(o.out);
  report::Suite suite(cfg, std::move(art), o.out);
  bool passed = false;
  const json doc = report::run_report(suite, &passed);
  write_text_file(paths.report, doc.dump(2) + "\n");
  json brief = json::array();
  for (const auto& c : doc.at("criteria")) brief.push_back({{"id", c.at("id")}, {"status", c.at("status")}});
  print(out, {{"command", "report"}, {"report", paths.report.string()}, {"status", doc.at("status")}, {"criteria", brief}});
  if (!passed) throw report_failure();
  return kOk;
}

int cmd_serve(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  if (o.port < 0 || o.port > 65535) throw ConfigError("port must be in [0, 65535]");
  service::ServerOptions so;
  so.host = o.host;
  so.port = static_cast<unsigned short>(o.port);
  so.out = o.out;
  service::Server server(cfg, so);
  print(out, {{"command", "serve"}, {"host", o.host}, {"port", server.port()}});
  out.flush();
  g_interrupted = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  server.wait();
  return kOk;
}

void error_line(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  err << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Concept-slider lab: axis fitting, adapter training and splat editing", "acs"};
  app.fallthrough();
  app.require_subcommand(1);
  app.add_option("--config", o.config, "JSON config file");
  app.add_option("--set", o.sets, "Override a config value, e.g. --set edit.gamma=0.2")->take_all();
  app.add_option("--out", o.out, "Output directory")->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "Write synthetic feature files for every stage and side");
  auto* fit = app.add_subcommand("fit-axis", "Fit concept axes and attribute bases");
  auto* train = app.add_subcommand("train-adapter", "Train the slider adapter");
  auto* ed = app.add_subcommand("edit", "Edit the splat scene at one slider value");
  ed->add_option("--alpha", o.alpha, "Slider value")->required();
  ed->add_flag("--sweep", o.sweep, "Also render a strip across the configured alpha grid");
  auto* rep = app.add_subcommand("report", "Run the property suite and write report.json");
  auto* serve = app.add_subcommand("serve", "Start the live editing service");
  serve->add_option("--port", o.port, "TCP port (0 picks a free one)")->capture_default_str();
  serve->add_option("--host", o.host, "Bind address")->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    error_line(err, "usage", e.what(), kUsage);
    err << app.help();
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (fit->parsed()) return cmd_fit_axis(o, out);
    if (train->parsed()) return cmd_train_adapter(o, out);
    if (ed->parsed()) return cmd_edit(o, out);
    if (rep->parsed()) return cmd_report(o, out);
    if (serve->parsed()) return cmd_serve(o, out);
  } catch (const report_failure&) {
    error_line(err, "invariant", "one or more report properties failed", kInvariantFailed);
    return kInvariantFailed;
  } catch (const ConfigError& e) {
    error_line(err, e.kind(), e.what(), kConfig);
    return kConfig;
  } catch (const IoError& e) {
    error_line(err, e.kind(), e.what(), kMissingFile);
    return kMissingFile;
  } catch (const FormatError& e) {
    error_line(err, e.kind(), e.what(), kFormat);
    return kFormat;
  } catch (const Error& e) {
    error_line(err, e.kind(), e.what(), kOther);
    return kOther;
  } catch (const std::exception& e) {
    error_line(err, "internal", e.what(), kOther);
    return kOther;
  }
  error_line(err, "usage", "no subcommand given", kUsage);
  err << app.help();
  return kUsage;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace acs::cli
