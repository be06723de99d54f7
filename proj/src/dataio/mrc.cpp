#include "cryoforge/dataio/mrc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cryoforge::io {

namespace {

constexpr std::size_t kHeaderBytes = 1024;

template<typename T>
void put(std::array<char, kHeaderBytes>& h, std::size_t word, T value) {
    static_assert(sizeof(T) == 4);
    std::memcpy(h.data() + 4 * word, &value, 4);
}

template<typename T>
T get(const std::array<char, kHeaderBytes>& h, std::size_t word) {
    static_assert(sizeof(T) == 4);
    T value;
    std::memcpy(&value, h.data() + 4 * word, 4);
    return value;
}

} // namespace

void mrc_write(const spectral::RealVolume& volume, double pixel_size, const std::filesystem::path& path) {
    check<ShapeError>(volume.consistent() && volume.side > 0, "mrc_write: malformed volume");
    check(pixel_size > 0.0 && std::isfinite(pixel_size), "mrc_write: pixel size must be positive, got {}", pixel_size);
    std::vector<float> data(volume.values.size());
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        check(std::isfinite(volume.values[i]), "mrc_write: non-finite voxel at {}", i);
        data[i] = static_cast<float>(volume.values[i]);
        sum += data[i];
    }
    const double mean = sum / static_cast<double>(data.size());
    for (float v : data)
        sum_sq += (v - mean) * (v - mean);
    const auto [lo, hi] = std::minmax_element(data.begin(), data.end());

    std::array<char, kHeaderBytes> h{};
    const auto n = static_cast<std::int32_t>(volume.side);
    const auto cell = static_cast<float>(static_cast<double>(volume.side) * pixel_size);
    for (std::size_t w : {0, 1, 2, 7, 8, 9})
        put<std::int32_t>(h, w, n);
    put<std::int32_t>(h, 3, 2);
    for (std::size_t w : {10, 11, 12})
        put<float>(h, w, cell);
    for (std::size_t w : {13, 14, 15})
        put<float>(h, w, 90.0f);
    put<std::int32_t>(h, 16, 1);
    put<std::int32_t>(h, 17, 2);
    put<std::int32_t>(h, 18, 3);
    put<float>(h, 19, *lo);
    put<float>(h, 20, *hi);
    put<float>(h, 21, static_cast<float>(mean));
    put<std::int32_t>(h, 22, 1);
    std::memcpy(h.data() + 4 * 26, "MRCO", 4);
    put<std::int32_t>(h, 27, 20140);
    std::memcpy(h.data() + 4 * 52, "MAP ", 4);
    h[4 * 53] = 0x44;
    h[4 * 53 + 1] = 0x44;
    put<float>(h, 54, static_cast<float>(std::sqrt(sum_sq / static_cast<double>(data.size()))));
    put<std::int32_t>(h, 55, 1);
    const char label[] = "cryoforge volume";
    std::memcpy(h.data() + 4 * 56, label, sizeof label - 1);

    std::ofstream out(path, std::ios::binary);
    check<IoError>(static_cast<bool>(out), "mrc_write: cannot open {}", path.string());
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    check<IoError>(static_cast<bool>(out), "mrc_write: write to {} failed", path.string());
}

MrcVolume mrc_read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    check<IoError>(static_cast<bool>(in), "mrc_read: cannot open {}", path.string());
    std::array<char, kHeaderBytes> h{};
    in.read(h.data(), static_cast<std::streamsize>(h.size()));
    check<IoError>(static_cast<bool>(in), "mrc_read: {} is shorter than the 1024-byte header", path.string());
    check<IoError>(std::memcmp(h.data() + 4 * 52, "MAP ", 4) == 0, "mrc_read: {}: field MAP does not read 'MAP '",
                   path.string());
    check<IoError>(h[4 * 53] == 0x44, "mrc_read: {}: field MACHST is not little-endian", path.string());
    const auto mode = get<std::int32_t>(h, 3);
    check<IoError>(mode == 2, "mrc_read: {}: field MODE is {}, only mode 2 (float32) is supported", path.string(), mode);
    const auto nx = get<std::int32_t>(h, 0), ny = get<std::int32_t>(h, 1), nz = get<std::int32_t>(h, 2);
    check<IoError>(nx > 0 && nx == ny && ny == nz, "mrc_read: {}: fields NX/NY/NZ = {}/{}/{} are not a cube",
                   path.string(), nx, ny, nz);
    const char* axes[] = {"MAPC", "MAPR", "MAPS"};
    for (std::size_t a = 0; a < 3; ++a) {
        const auto v = get<std::int32_t>(h, 16 + a);
        check<IoError>(v == static_cast<std::int32_t>(a + 1), "mrc_read: {}: field {} is {}, expected {}",
                       path.string(), axes[a], v, a + 1);
    }
    const auto mx = get<std::int32_t>(h, 7);
    const auto xlen = get<float>(h, 10);
    check<IoError>(mx > 0 && xlen > 0.0f, "mrc_read: {}: fields MX/CELLA do not give a pixel size", path.string());
    const auto ext = get<std::int32_t>(h, 23);
    check<IoError>(ext >= 0, "mrc_read: {}: field NSYMBT is negative", path.string());
    in.seekg(static_cast<std::streamoff>(kHeaderBytes) + ext);

    MrcVolume out;
    out.pixel_size = static_cast<double>(xlen) / static_cast<double>(mx);
    out.volume = spectral::RealVolume(nx);
    std::vector<float> data(out.volume.values.size());
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    check<IoError>(static_cast<bool>(in), "mrc_read: {}: data block holds fewer than {} floats", path.string(),
                   data.size());
    std::copy(data.begin(), data.end(), out.volume.values.begin());
    return out;
}

} // namespace cryoforge::io
