#include "manifest.hpp"

#include <chrono>
#include <fstream>

#include <fmt/chrono.h>

#include "cryoforge/common.hpp"
#include "cryoforge/util/hash.hpp"

namespace cryoforge::tools {

std::string RunManifest::hash() const {
    const nlohmann::json core = {{"command", command}, {"config", config}, {"seed", seed}, {"outputs", outputs}};
    return hex_digest(fnv1a(core.dump()));
}

nlohmann::json RunManifest::to_json() const {
    return {{"command", command}, {"config", config},          {"seed", seed},
            {"outputs", outputs}, {"hash", hash()},            {"started_at", started_at},
            {"finished_at", finished_at}, {"results", results}};
}

void RunManifest::write(const std::filesystem::path& dir) const {
    std::ofstream out(dir / "manifest.json");
    check<IoError>(static_cast<bool>(out), "cannot write {}", (dir / "manifest.json").string());
    out << to_json().dump(2) << '\n';
}

std::string utc_now() {
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

nlohmann::json read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in)
        return nullptr;
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(fmt::format("{}: {}", (dir / "manifest.json").string(), e.what()));
    }
}

} // namespace cryoforge::tools
