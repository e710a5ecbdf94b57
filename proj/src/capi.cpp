#include "voxsynth/voxsynth.h"

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "config.hpp"
#include "json.hpp"
#include "pipeline.hpp"
#include "stats.hpp"

struct vxs_config {
  voxsynth::RunConfig value;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_kind;

vxs_status fail(vxs_status status, std::string kind, std::string msg) {
  for (auto& c : msg)
    if (c == '\n' || c == '\r') c = ' ';
  g_kind = std::move(kind);
  g_error = std::move(msg);
  return status;
}

template <class Fn>
vxs_status guarded(Fn fn) {
  g_error.clear();
  g_kind.clear();
  try {
    fn();
    return VXS_OK;
  } catch (const voxsynth::ConfigError& e) {
    return fail(VXS_USAGE_ERROR, "config", e.what());
  } catch (const voxsynth::PipelineError& e) {
    return fail(VXS_RUNTIME_ERROR, e.kind(), e.what());
  } catch (const std::invalid_argument& e) {
    return fail(VXS_USAGE_ERROR, "argument", e.what());
  } catch (const std::bad_alloc&) {
    return fail(VXS_RUNTIME_ERROR, "memory", "out of memory");
  } catch (const std::exception& e) {
    return fail(VXS_RUNTIME_ERROR, "runtime", e.what());
  }
}

vxs_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && cap > s.size()) std::memcpy(buf, s.c_str(), s.size() + 1);
  else if (buf && cap > 0) return fail(VXS_USAGE_ERROR, "argument", "buffer too small");
  return VXS_OK;
}

void require(const void* p, const char* what) {
  if (!p) throw std::invalid_argument(std::string(what) + " must not be null");
}

}  // namespace

extern "C" {

const char* vxs_last_error(void) { return g_error.c_str(); }
const char* vxs_last_error_kind(void) { return g_kind.c_str(); }
const char* vxs_version(void) { return "0.1.0"; }

vxs_status vxs_config_default(vxs_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new vxs_config{};
  });
}

vxs_status vxs_config_load(const char* path, vxs_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    const std::string p(path);
    if (p.size() > 5 && p.compare(p.size() - 5, 5, ".json") == 0) {
      std::ifstream in(p, std::ios::binary);
      if (!in) throw voxsynth::ConfigError("cannot read manifest " + p);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw voxsynth::ConfigError(p + ": not a valid manifest: " + e.what());
      }
      if (!j.contains("config") || !j["config"].is_string())
        throw voxsynth::ConfigError(p + ": manifest has no config text");
      *out = new vxs_config{voxsynth::parse_config(j["config"].get<std::string>())};
      return;
    }
    *out = new vxs_config{voxsynth::load_config(p)};
  });
}

vxs_status vxs_config_parse(const char* text, vxs_config** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    *out = new vxs_config{voxsynth::parse_config(text)};
  });
}

void vxs_config_free(vxs_config* config) { delete config; }

vxs_status vxs_config_set(vxs_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    auto next = config->value;
    voxsynth::set_config_value(next, key, value);
    next.validate();
    config->value = std::move(next);
  });
}

vxs_status vxs_config_set_seed(vxs_config* config, uint64_t seed) {
  return guarded([&] {
    require(config, "config");
    config->value.seed = seed;
  });
}

vxs_status vxs_config_get(const vxs_config* config, const char* key, char* buf, size_t cap, size_t* needed) {
  std::string s;
  const auto st = guarded([&] {
    require(config, "config");
    require(key, "key");
    s = voxsynth::get_config_value(config->value, key);
  });
  return st == VXS_OK ? copy_out(s, buf, cap, needed) : st;
}

vxs_status vxs_config_serialize(const vxs_config* config, char* buf, size_t cap, size_t* needed) {
  std::string s;
  const auto st = guarded([&] {
    require(config, "config");
    s = voxsynth::serialize_config(config->value);
  });
  return st == VXS_OK ? copy_out(s, buf, cap, needed) : st;
}

size_t vxs_config_key_count(void) { return voxsynth::config_key_docs().size(); }

vxs_status vxs_config_key_doc(size_t index, const char** key, const char** doc) {
  static const auto docs = voxsynth::config_key_docs();
  return guarded([&] {
    if (index >= docs.size()) throw std::invalid_argument("key index out of range");
    if (key) *key = docs[index].key.c_str();
    if (doc) *doc = docs[index].doc.c_str();
  });
}

vxs_status vxs_run(const vxs_config* config, const char* command, const char* out_dir, vxs_log_fn log, void* user) {
  return guarded([&] {
    require(config, "config");
    require(command, "command");
    const std::string dir = out_dir ? out_dir : config->value.out;
    voxsynth::Logger logger;
    if (log) logger = [log, user](const std::string& m) { log(m.c_str(), user); };
    voxsynth::run_command(command, config->value, dir, logger);
  });
}

vxs_status vxs_phantom_render(const vxs_config* config, double age_years, double sex, uint64_t seed, double* voxels,
                              uint8_t* labels, size_t count) {
  return guarded([&] {
    require(config, "config");
    require(voxels, "voxels");
    const auto& spec = config->value.phantom;
    const auto meta = voxsynth::Metadata::from_years(age_years, sex);
    const auto lv = voxsynth::generate_phantom(spec, meta, seed);
    if (count != lv.volume.size())
      throw std::invalid_argument("count " + std::to_string(count) + " differs from grid size " +
                                  std::to_string(lv.volume.size()));
    std::memcpy(voxels, lv.volume.voxels.data(), count * sizeof(double));
    if (labels) std::memcpy(labels, lv.labels.data(), count);
  });
}

vxs_status vxs_cohens_d(const double* a, size_t na, const double* b, size_t nb, double* out) {
  return guarded([&] {
    require(a, "a");
    require(b, "b");
    require(out, "out");
    *out = voxsynth::cohens_d({a, na}, {b, nb});
  });
}

}  // extern "C"
