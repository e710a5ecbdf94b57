#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "voxsynth/voxsynth.h"

namespace {

const std::vector<std::string> kCommands = {"train-codec", "fit-glm", "train-diffusion", "synth",
                                            "eval",        "augment-exp", "pipeline", "show-config"};

int report(int status, const std::string& kind, const std::string& msg) {
  std::fprintf(stderr, "voxsynth: error: status=%d kind=%s msg=%s\n", status, kind.c_str(), msg.c_str());
  return status;
}

int report_last(vxs_status st) { return report(st, vxs_last_error_kind(), vxs_last_error()); }

std::string key_help() {
  std::string out = "Config keys (section.key; override with --override section.key=value):\n";
  for (size_t i = 0; i < vxs_config_key_count(); ++i) {
    const char* key = nullptr;
    const char* doc = nullptr;
    vxs_config_key_doc(i, &key, &doc);
    std::string k = key;
    if (k.size() < 34) k.resize(34, ' ');
    out += "  " + k + " " + doc + "\n";
  }
  out +=
      "\nOutput directory: --out, else $VOXSYNTH_OUT, else run.out.\n"
      "Exit status: 0 success, 1 usage error, 2 runtime failure.\n";
  return out;
}

void log_line(const char* msg, void*) { std::fprintf(stderr, "voxsynth: %s\n", msg); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metadata-conditioned phantom volume synthesis: train, sample and evaluate."};
  app.footer(key_help());
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  bool quiet = false;
  app.add_option("command", command, "train-codec | fit-glm | train-diffusion | synth | eval | augment-exp | "
                                     "pipeline | show-config")
      ->required()
      ->check(CLI::IsMember(kCommands));
  app.add_option("--config", config_path, "config file, or a manifest-*.json from an earlier run");
  auto* seed_opt = app.add_option("--seed", seed, "global seed (overrides run.seed)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--override", overrides, "section.key=value, repeatable")->take_all()->allow_extra_args(false);
  app.add_flag("--quiet", quiet, "suppress progress messages");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (auto& c : msg)
      if (c == '\n') c = ' ';
    return report(VXS_USAGE_ERROR, "usage", msg);
  }

  vxs_config* cfg = nullptr;
  vxs_status st = config_path.empty() ? vxs_config_default(&cfg) : vxs_config_load(config_path.c_str(), &cfg);
  if (st != VXS_OK) return report_last(st);
  auto done = [&](int code) {
    vxs_config_free(cfg);
    return code;
  };
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) return done(report(VXS_USAGE_ERROR, "usage", "override must look like key=value: " + o));
    st = vxs_config_set(cfg, o.substr(0, eq).c_str(), o.substr(eq + 1).c_str());
    if (st != VXS_OK) return done(report_last(st));
  }
  if (seed_opt->count() > 0 && (st = vxs_config_set_seed(cfg, seed)) != VXS_OK) return done(report_last(st));

  if (command == "show-config") {
    size_t needed = 0;
    vxs_config_serialize(cfg, nullptr, 0, &needed);
    std::string text(needed, '\0');
    if ((st = vxs_config_serialize(cfg, text.data(), text.size(), &needed)) != VXS_OK) return done(report_last(st));
    text.resize(needed - 1);
    std::fputs(text.c_str(), stdout);
    return done(0);
  }

  if (out_dir.empty())
    if (const char* env = std::getenv("VOXSYNTH_OUT"); env && *env) out_dir = env;
  st = vxs_run(cfg, command.c_str(), out_dir.empty() ? nullptr : out_dir.c_str(), quiet ? nullptr : log_line, nullptr);
  if (st != VXS_OK) return done(report_last(st));
  return done(0);
}
