#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cqcim {

/// A CiM cell technology: level count, nominal (normalized) conductances and
/// the Gaussian deviation of each programmed level.
struct DeviceProfile {
  std::string name;
  std::size_t levels = 0;
  std::vector<double> sigma_v;
  std::vector<double> nominal;

  /// Throws ParameterError if the invariants do not hold.
  void validate() const;
};

/// Equally spaced conductances over [0, 1].
std::vector<double> uniform_nominal(std::size_t levels);

/// Built-in presets "D-1" .. "D-5" (measured/extrapolated RRAM and FeFET rows).
/// D-1 is a binary device with sigma 0.01 on both states.
std::vector<DeviceProfile> builtin_profiles();

/// Looks up a preset by name ("D-2") or by its technology label ("FeFET_2").
/// Throws UsageError listing the valid names if absent.
DeviceProfile builtin_profile(std::string_view name);

/// {"name": ..., "levels": K, "sigma_v": [...], "nominal": [...]?}. A
/// "levels": 1 entry is read as an on/off (two-state) device.
DeviceProfile profile_from_json(std::string_view json_text);
DeviceProfile load_profile(const std::filesystem::path& path);
std::string profile_to_json(const DeviceProfile& profile);

}  // namespace cqcim
