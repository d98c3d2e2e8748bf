#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "recast/common.hpp"

namespace recast {

// Snaps a unit-range value onto the 8-bit grid. The renderer quantizes at
// the source so that saving and reloading a clip is lossless.
inline float quantize_unit(double v) {
    if (v < 0) v = 0;
    if (v > 1) v = 1;
    return static_cast<float>(std::lround(v * 255.0) / 255.0);
}

// Pixel-space video clip, planar [F][3][H][W], values in [0,1].
struct Clip {
    int frames = 0;
    int height = 0;
    int width = 0;
    int fps = 12;  // nominal, metadata only
    std::string role;
    std::vector<float> data;

    int64_t plane() const { return static_cast<int64_t>(height) * width; }
    int64_t frame_stride() const { return 3 * plane(); }
    int64_t size() const { return static_cast<int64_t>(data.size()); }

    float& at(int f, int c, int y, int x) { return data[((static_cast<int64_t>(f) * 3 + c) * height + y) * width + x]; }
    float at(int f, int c, int y, int x) const {
        return data[((static_cast<int64_t>(f) * 3 + c) * height + y) * width + x];
    }

    static Clip make(int frames, int height, int width, std::string role = "") {
        if (frames < 1) throw DataError("Clip: frame count must be >= 1");
        Clip c;
        c.frames = frames;
        c.height = height;
        c.width = width;
        c.role = std::move(role);
        c.data.assign(static_cast<size_t>(frames) * 3 * height * width, 0.0f);
        return c;
    }

    void validate() const {
        if (frames < 1) throw DataError("Clip: frame count must be >= 1");
        if (size() != static_cast<int64_t>(frames) * 3 * height * width)
            throw DataError("Clip: data length inconsistent with dimensions");
        for (float v : data)
            if (!(v >= 0.0f && v <= 1.0f)) throw DataError("Clip: value outside [0,1]");
    }
};

// ---------------------------------------------------------------------------
// portable pixmap I/O (P6 color, P5 gray), 8-bit
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, const Clip& clip, int frame) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << "P6\n" << clip.width << " " << clip.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(clip.width) * 3);
    for (int y = 0; y < clip.height; ++y) {
        for (int x = 0; x < clip.width; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = clip.at(frame, c, y, x);
                row[x * 3 + c] = static_cast<unsigned char>(std::lround(std::min(1.0f, std::max(0.0f, v)) * 255.0f));
            }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw DataError("short write on " + path);
}

inline void write_pgm(const std::string& path, const std::vector<float>& gray, int h, int w) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> buf(gray.size());
    for (size_t i = 0; i < gray.size(); ++i)
        buf[i] = static_cast<unsigned char>(std::lround(std::min(1.0f, std::max(0.0f, gray[i])) * 255.0f));
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("short write on " + path);
}

namespace detail {

inline void skip_pnm_ws(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

}  // namespace detail

namespace detail {

inline void read_ppm_header(std::istream& f, const std::string& path, int& w, int& h) {
    std::string magic;
    f >> magic;
    if (magic != "P6") throw DataError(path + ": not a P6 pixmap");
    skip_pnm_ws(f);
    int maxval;
    f >> w;
    skip_pnm_ws(f);
    f >> h;
    skip_pnm_ws(f);
    f >> maxval;
    f.get();  // single whitespace after header
    if (maxval != 255) throw DataError(path + ": unsupported maxval");
    if (w < 1 || h < 1) throw DataError(path + ": bad dimensions");
}

}  // namespace detail

inline void read_ppm_frame(const std::string& path, Clip& clip, int frame) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path);
    int w, h;
    detail::read_ppm_header(f, path, w, h);
    if (w != clip.width || h != clip.height) throw DataError(path + ": resolution mismatch");
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!f) throw DataError(path + ": truncated pixel data");
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) clip.at(frame, c, y, x) = static_cast<float>(row[x * 3 + c]) / 255.0f;
    }
}

// single pixmap file -> one-frame clip, dimensions taken from the header
inline Clip load_image_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path);
    int w, h;
    detail::read_ppm_header(f, path, w, h);
    f.close();
    Clip c = Clip::make(1, h, w);
    read_ppm_frame(path, c, 0);
    return c;
}

// ---------------------------------------------------------------------------
// clip directory format: zero-padded frame pixmaps + manifest.json
// ---------------------------------------------------------------------------

inline void save_clip(const Clip& clip, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["frames"] = clip.frames;
    manifest["height"] = clip.height;
    manifest["width"] = clip.width;
    manifest["fps"] = clip.fps;
    manifest["role"] = clip.role;
    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw DataError("cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";
    char name[32];
    for (int i = 0; i < clip.frames; ++i) {
        std::snprintf(name, sizeof(name), "frame_%04d.ppm", i);
        write_ppm(dir + "/" + name, clip, i);
    }
}

inline Clip load_clip(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw DataError("missing manifest.json in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(mf, nullptr, true);
    Clip clip = Clip::make(manifest.at("frames").get<int>(), manifest.at("height").get<int>(),
                           manifest.at("width").get<int>());
    clip.fps = manifest.value("fps", 12);
    clip.role = manifest.value("role", "");
    char name[32];
    for (int i = 0; i < clip.frames; ++i) {
        std::snprintf(name, sizeof(name), "frame_%04d.ppm", i);
        read_ppm_frame(dir + "/" + name, clip, i);
    }
    return clip;
}

}  // namespace recast
