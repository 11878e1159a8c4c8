#include "cqcim/device.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "cqcim/errors.hpp"
#include "json.hpp"

namespace cqcim {

void DeviceProfile::validate() const {
  if (levels < 2) throw ParameterError("device profile '" + name + "': needs at least 2 levels");
  if (sigma_v.size() != levels)
    throw ParameterError("device profile '" + name + "': sigma_v length != levels");
  if (nominal.size() != levels)
    throw ParameterError("device profile '" + name + "': nominal length != levels");
  for (double s : sigma_v)
    if (!(s >= 0.0) || !std::isfinite(s))
      throw ParameterError("device profile '" + name + "': sigma_v must be finite and >= 0");
  for (std::size_t i = 1; i < levels; ++i)
    if (!(nominal[i] > nominal[i - 1]))
      throw ParameterError("device profile '" + name + "': nominal must be strictly increasing");
}

std::vector<double> uniform_nominal(std::size_t levels) {
  std::vector<double> g(levels);
  for (std::size_t i = 0; i < levels; ++i)
    g[i] = levels == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(levels - 1);
  return g;
}

std::vector<DeviceProfile> builtin_profiles() {
  auto four = [](std::string name, double outer, double inner) {
    return DeviceProfile{std::move(name), 4, {outer, inner, inner, outer}, uniform_nominal(4)};
  };
  return {
      DeviceProfile{"D-1", 2, {0.0100, 0.0100}, uniform_nominal(2)},
      four("D-2", 0.0067, 0.0135),
      four("D-3", 0.0049, 0.0146),
      four("D-4", 0.0038, 0.0151),
      four("D-5", 0.0026, 0.0155),
  };
}

DeviceProfile builtin_profile(std::string_view name) {
  static const std::pair<std::string_view, std::string_view> aliases[] = {
      {"RRAM_1", "D-1"}, {"FeFET_2", "D-2"}, {"FeFET_3", "D-3"},
      {"RRAM_4", "D-4"}, {"FeFET_6", "D-5"},
  };
  std::string_view key = name;
  for (const auto& [alias, preset] : aliases)
    if (alias == name) key = preset;
  std::string known;
  for (auto& p : builtin_profiles()) {
    if (p.name == key) return p;
    known += (known.empty() ? "" : ", ") + p.name;
  }
  throw UsageError("unknown device preset '" + std::string(name) + "' (known: ideal, " + known +
                   ")");
}

DeviceProfile profile_from_json(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("device profile JSON: ") + e.what());
  }
  if (!j.is_object()) throw InputError("device profile JSON must be an object");
  for (const auto& [key, _] : j.items())
    if (key != "name" && key != "levels" && key != "sigma_v" && key != "nominal")
      throw InputError("device profile JSON: unknown key '" + key + "'");
  DeviceProfile p;
  try {
    p.name = j.value("name", std::string("custom"));
    const auto declared = j.at("levels").get<std::size_t>();
    const auto sigma = j.at("sigma_v").get<std::vector<double>>();
    p.levels = declared == 1 ? 2 : declared;
    if (sigma.size() < p.levels)
      throw InputError("device profile JSON: sigma_v has fewer entries than levels");
    p.sigma_v.assign(sigma.begin(), sigma.begin() + static_cast<std::ptrdiff_t>(p.levels));
    if (j.contains("nominal")) {
      p.nominal = j.at("nominal").get<std::vector<double>>();
    } else {
      p.nominal = uniform_nominal(p.levels);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("device profile JSON: ") + e.what());
  }
  p.validate();
  return p;
}

DeviceProfile load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open device profile " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return profile_from_json(buf.str());
}

std::string profile_to_json(const DeviceProfile& profile) {
  nlohmann::json j;
  j["name"] = profile.name;
  j["levels"] = profile.levels;
  j["sigma_v"] = profile.sigma_v;
  j["nominal"] = profile.nominal;
  return j.dump();
}

}  // namespace cqcim
