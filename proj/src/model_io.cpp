#include "rnnmhe/model_io.hpp"

#include <chrono>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "rnnmhe/error.hpp"

namespace rnnmhe {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json spec_to_json(const ModelSpec& s) {
  ordered_json j;
  j["kind"] = std::string(to_string(s.kind));
  j["n_u"] = s.n_u;
  j["n_h"] = s.n_h;
  j["n_y"] = s.n_y;
  if (s.kind == Arch::Nnarx) j["order"] = s.order;
  if (s.kind == Arch::Esn) {
    j["spectral_radius"] = s.spectral_radius;
    j["leak"] = s.leak;
    j["input_scale"] = s.input_scale;
  }
  j["feedthrough"] = s.feedthrough;
  j["output_bias"] = s.output_bias;
  return j;
}

namespace {

template <class T>
T field(const json& j, const char* key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + key, e.what());
  }
}

template <class T>
T required(const json& j, const char* key, const std::string& path) {
  if (!j.contains(key)) throw ConfigError(path + key, "missing");
  return field<T>(j, key, path, T{});
}

}  // namespace

ModelSpec spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model", "expected an object");
  ModelSpec s;
  s.kind = parse_arch(required<std::string>(j, "kind", "model."));
  s.n_u = required<std::size_t>(j, "n_u", "model.");
  s.n_h = field<std::size_t>(j, "n_h", "model.", s.kind == Arch::Nnarx ? 0 : 1);
  s.n_y = required<std::size_t>(j, "n_y", "model.");
  s.order = field<std::size_t>(j, "order", "model.", s.order);
  s.spectral_radius = field<double>(j, "spectral_radius", "model.", s.spectral_radius);
  s.leak = field<double>(j, "leak", "model.", s.leak);
  s.input_scale = field<double>(j, "input_scale", "model.", s.input_scale);
  s.feedthrough = field<bool>(j, "feedthrough", "model.", s.feedthrough);
  s.output_bias = field<bool>(j, "output_bias", "model.", s.output_bias);
  s.validate();
  return s;
}

ordered_json params_to_json(const ParamVector& p) {
  ordered_json j;
  j["spec"] = spec_to_json(p.spec());
  j["values"] = std::vector<double>(p.values().begin(), p.values().end());
  return j;
}

ParamVector params_from_json(const json& j) {
  if (!j.contains("spec") || !j.contains("values")) {
    throw ArtifactError("parameter record needs 'spec' and 'values'");
  }
  return ParamVector(spec_from_json(j.at("spec")), j.at("values").get<std::vector<double>>());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

void dump_rec(const ordered_json& j, std::ostringstream& os, int indent, int depth) {
  const auto pad = [&](int d) {
    if (indent >= 0) os << '\n' << std::string(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case json::value_t::number_float: {
      const double v = j.get<double>();
      if (!std::isfinite(v)) {
        os << "null";
      } else {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        std::string s(buf);
        // keep it a JSON float so it reads back as double
        if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
        os << s;
      }
      return;
    }
    case json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) os << ',';
        first = false;
        pad(depth + 1);
        os << json(it.key()).dump() << (indent >= 0 ? ": " : ":");
        dump_rec(it.value(), os, indent, depth + 1);
      }
      pad(depth);
      os << '}';
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      // numeric arrays on one line
      const bool flat = std::all_of(j.begin(), j.end(), [](const auto& e) { return e.is_primitive(); });
      os << '[';
      bool first = true;
      for (const auto& e : j) {
        if (!first) os << (flat && indent >= 0 ? ", " : ",");
        first = false;
        if (!flat) pad(depth + 1);
        dump_rec(e, os, indent, depth + 1);
      }
      if (!flat) pad(depth);
      os << ']';
      return;
    }
    default:
      os << j.dump();
  }
}

}  // namespace

std::string dump_json(const ordered_json& j, int indent) {
  std::ostringstream os;
  dump_rec(j, os, indent, 0);
  return os.str();
}

void save_checkpoint(const std::filesystem::path& path, const ParamCheckpoint& c) {
  ordered_json j;
  j["spec"] = spec_to_json(c.params.spec());
  j["values"] = std::vector<double>(c.params.values().begin(), c.params.values().end());
  j["seed"] = c.seed;
  j["scheme"] = c.scheme;
  j["created_at"] = c.created_at.empty() ? utc_timestamp() : c.created_at;
  std::ofstream os(path);
  if (!os) throw ArtifactError("cannot write " + path.string());
  os << dump_json(j) << '\n';
  if (!os) throw ArtifactError("write failed: " + path.string());
}

ParamCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ArtifactError("cannot read " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ArtifactError(path.string() + ": " + e.what());
  }
  ParamCheckpoint c{params_from_json(j), j.value("seed", std::uint64_t{0}),
                    j.value("scheme", std::string("glorot")), j.value("created_at", std::string())};
  return c;
}

}  // namespace rnnmhe
