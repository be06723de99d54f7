#include "image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <png.h>

#include "cryoforge/common.hpp"

namespace cryoforge::tools {

namespace {

using Rgb = std::array<unsigned char, 3>;

struct Canvas {
    int width, height;
    std::vector<unsigned char> rgb;

    Canvas(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(3 * w * h), 255) {}

    void put(int x, int y, Rgb c) {
        if (x < 0 || y < 0 || x >= width || y >= height)
            return;
        const auto at = 3 * (static_cast<std::size_t>(y) * width + x);
        std::copy(c.begin(), c.end(), rgb.begin() + static_cast<std::ptrdiff_t>(at));
    }

    void line(int x0, int y0, int x1, int y1, Rgb c, int thickness = 1) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            for (int t = 0; t < thickness; ++t)
                for (int u = 0; u < thickness; ++u)
                    put(x0 + t - thickness / 2, y0 + u - thickness / 2, c);
            if (x0 == x1 && y0 == y1)
                break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
};

void write_png(const std::filesystem::path& path, int width, int height, const std::vector<unsigned char>& pixels,
               bool gray) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const bool ok = png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data(), 0, nullptr) != 0;
    check<IoError>(ok, "cannot write {}: {}", path.string(), image.message);
}

spectral::RealImage square_image(const std::vector<double>& values, std::size_t w, std::size_t h,
                                 const std::filesystem::path& path) {
    check<IoError>(w == h && w % 2 == 0 && w > 0, "{}: image must be square with an even side, got {}x{}",
                   path.string(), w, h);
    spectral::RealImage out(static_cast<std::int64_t>(w));
    out.values = values;
    return out;
}

spectral::RealImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    check<IoError>(static_cast<bool>(in), "cannot open {}", path.string());
    std::string magic;
    in >> magic;
    const auto next_number = [&] {
        while (in >> std::ws && in.peek() == '#')
            in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
        long v = -1;
        in >> v;
        check<IoError>(!in.fail() && v >= 0, "{}: malformed PGM header", path.string());
        return static_cast<std::size_t>(v);
    };
    check<IoError>(magic == "P5" || magic == "P2", "{}: not a PGM file", path.string());
    const auto w = next_number(), h = next_number(), maxval = next_number();
    check<IoError>(maxval > 0 && maxval < 65536, "{}: bad PGM maxval {}", path.string(), maxval);
    std::vector<double> values(w * h);
    if (magic == "P2") {
        for (auto& v : values)
            v = static_cast<double>(next_number()) / static_cast<double>(maxval);
    } else {
        in.get();
        const std::size_t bytes = maxval < 256 ? 1 : 2;
        std::vector<unsigned char> raw(w * h * bytes);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        check<IoError>(in.gcount() == static_cast<std::streamsize>(raw.size()), "{}: truncated PGM data",
                       path.string());
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double v = bytes == 1 ? raw[i] : raw[2 * i] * 256.0 + raw[2 * i + 1];
            values[i] = v / static_cast<double>(maxval);
        }
    }
    return square_image(values, w, h, path);
}

} // namespace

spectral::RealImage read_gray_image(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".pgm" || ext == ".PGM")
        return read_pgm(path);
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    check<IoError>(png_image_begin_read_from_file(&image, path.string().c_str()) != 0, "cannot read {}: {}",
                   path.string(), image.message);
    image.format = PNG_FORMAT_LINEAR_Y;
    std::vector<png_uint_16> buffer(PNG_IMAGE_SIZE(image) / sizeof(png_uint_16));
    const bool ok = png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) != 0;
    check<IoError>(ok, "cannot decode {}: {}", path.string(), image.message);
    std::vector<double> values(buffer.size());
    for (std::size_t i = 0; i < buffer.size(); ++i)
        values[i] = buffer[i] / 65535.0;
    return square_image(values, image.width, image.height, path);
}

void write_gray_png(const spectral::RealImage& image, const std::filesystem::path& path) {
    const auto [lo, hi] = std::minmax_element(image.values.begin(), image.values.end());
    const double span = *hi > *lo ? *hi - *lo : 1.0;
    std::vector<unsigned char> pixels(image.values.size());
    for (std::size_t i = 0; i < pixels.size(); ++i)
        pixels[i] = static_cast<unsigned char>(std::lround(255.0 * (image.values[i] - *lo) / span));
    write_png(path, static_cast<int>(image.side), static_cast<int>(image.side), pixels, true);
}

void write_line_plot(const std::vector<Series>& series, const std::filesystem::path& path,
                     const PlotOptions& options) {
    const auto ty = [&](double y) { return options.log_y ? std::log10(y) : y; };
    const auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!options.log_y || y > 0); };
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
            if (usable(s.x[i], s.y[i])) {
                x0 = std::min(x0, s.x[i]);
                x1 = std::max(x1, s.x[i]);
                y0 = std::min(y0, ty(s.y[i]));
                y1 = std::max(y1, ty(s.y[i]));
            }
    if (!std::isfinite(x0)) {
        x0 = y0 = 0.0;
        x1 = y1 = 1.0;
    }
    if (x1 <= x0)
        x1 = x0 + 1.0;
    if (y1 <= y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;

    Canvas canvas(options.width, options.height);
    const int left = 40, right = options.width - 20, top = 20, bottom = options.height - 30;
    const auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (right - left))); };
    const auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (bottom - top))); };

    const Rgb grid{225, 225, 225}, axis{60, 60, 60};
    const auto ticks = [](double lo, double hi, bool decades) {
        std::vector<double> out;
        if (decades) {
            for (double d = std::ceil(lo); d <= hi; d += 1.0)
                out.push_back(d);
            return out;
        }
        const double raw = (hi - lo) / 6.0;
        const double mag = std::pow(10.0, std::floor(std::log10(raw)));
        const double step = raw / mag < 2 ? 2 * mag : raw / mag < 5 ? 5 * mag : 10 * mag;
        for (double v = std::ceil(lo / step) * step; v <= hi; v += step)
            out.push_back(v);
        return out;
    };
    for (double v : ticks(x0, x1, false))
        canvas.line(px(v), top, px(v), bottom, grid);
    for (double v : ticks(y0, y1, options.log_y))
        canvas.line(left, py(v), right, py(v), grid);
    canvas.line(left, top, left, bottom, axis);
    canvas.line(left, bottom, right, bottom, axis);
    canvas.line(right, top, right, bottom, axis);
    canvas.line(left, top, right, top, axis);

    for (const auto& s : series) {
        bool have = false;
        int lx = 0, ly = 0;
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!usable(s.x[i], s.y[i])) {
                have = false;
                continue;
            }
            const int cx = px(s.x[i]), cy = py(ty(s.y[i]));
            if (have)
                canvas.line(lx, ly, cx, cy, s.color, 2);
            else
                canvas.line(cx, cy, cx, cy, s.color, 3);
            lx = cx;
            ly = cy;
            have = true;
        }
    }
    write_png(path, canvas.width, canvas.height, canvas.rgb, false);
}

} // namespace cryoforge::tools
