#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace cryoforge::tools {

/// Provenance record written once per run directory. The hash covers the
/// command, configuration, seed and output names; timestamps are excluded.
struct RunManifest {
    std::string command;
    nlohmann::json config;
    std::uint64_t seed{0};
    std::vector<std::string> outputs;
    std::string started_at;
    std::string finished_at;
    nlohmann::json results = nlohmann::json::object();

    [[nodiscard]] std::string hash() const;
    [[nodiscard]] nlohmann::json to_json() const;
    void write(const std::filesystem::path& dir) const;
};

[[nodiscard]] std::string utc_now();
/// Manifest of a run directory, or null when there is none.
[[nodiscard]] nlohmann::json read_manifest(const std::filesystem::path& dir);

} // namespace cryoforge::tools
