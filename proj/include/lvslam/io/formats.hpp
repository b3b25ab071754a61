// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lvslam/eval.hpp"
#include "lvslam/geometry.hpp"
#include "lvslam/image.hpp"

namespace lvslam::io {

inline constexpr std::uint32_t kMaxRasterDim = 65535;
inline constexpr std::uint64_t kMaxRasterElems = 1ull << 28;

namespace detail {

inline std::vector<char> read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingFile("cannot open " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return buf;
}

inline void write_all(const std::string& path, const void* data, std::size_t size) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoFailure("cannot open " + path + " for writing");
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!f) throw IoFailure("short write to " + path);
}

struct Reader {
    const char* data;
    std::size_t size;
    std::size_t pos = 0;
    std::string path;

    template <typename T>
    T take(const char* what) {
        if (pos + sizeof(T) > size)
            throw TruncatedFile(path + ": truncated while reading " + what);
        T v;
        std::memcpy(&v, data + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    void take_bytes(void* out, std::size_t n, const char* what) {
        if (pos + n > size) throw TruncatedFile(path + ": truncated while reading " + what);
        std::memcpy(out, data + pos, n);
        pos += n;
    }
};

inline void check_dims(const std::string& path, std::uint64_t h, std::uint64_t w,
                       std::uint64_t c) {
    if (h == 0 || w == 0 || c == 0 || h > kMaxRasterDim || w > kMaxRasterDim ||
        h * w * c > kMaxRasterElems)
        throw TruncatedFile(path + ": implausible raster dimensions");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// KITTI-style LiDAR scan: packed little-endian float32 (x, y, z, intensity).

inline PointCloud load_scan(const std::string& path) {
    const auto buf = detail::read_all(path);
    if (buf.size() % 16 != 0)
        throw MalformedScan(path + ": size is not a multiple of 16 bytes");
    PointCloud cloud;
    const std::size_t n = buf.size() / 16;
    cloud.points.reserve(n);
    cloud.intensities.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        float v[4];
        std::memcpy(v, buf.data() + i * 16, 16);
        for (float x : v)
            if (!std::isfinite(x)) throw MalformedScan(path + ": non-finite coordinate");
        cloud.points.emplace_back(v[0], v[1], v[2]);
        cloud.intensities.push_back(v[3]);
    }
    return cloud;
}

inline void save_scan(const std::string& path, const PointCloud& cloud) {
    std::vector<char> buf(cloud.size() * 16);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        float v[4] = {static_cast<float>(cloud.points[i].x()),
                      static_cast<float>(cloud.points[i].y()),
                      static_cast<float>(cloud.points[i].z()),
                      i < cloud.intensities.size() ? cloud.intensities[i] : 0.0f};
        std::memcpy(buf.data() + i * 16, v, 16);
    }
    detail::write_all(path, buf.data(), buf.size());
}

// ---------------------------------------------------------------------------
// Depth map: u32 H, u32 W, then row-major float32; 0 = invalid.

inline ImageF load_depth(const std::string& path) {
    const auto buf = detail::read_all(path);
    detail::Reader r{buf.data(), buf.size(), 0, path};
    const auto h = r.take<std::uint32_t>("height");
    const auto w = r.take<std::uint32_t>("width");
    detail::check_dims(path, h, w, 1);
    ImageF img(static_cast<int>(h), static_cast<int>(w), 1);
    for (auto& v : img.data()) v = r.take<float>("depth payload");
    return img;
}

inline void save_depth(const std::string& path, const ImageF& img) {
    std::vector<char> buf(8 + img.size() * 4);
    const std::uint32_t h = img.height(), w = img.width();
    std::memcpy(buf.data(), &h, 4);
    std::memcpy(buf.data() + 4, &w, 4);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const float v = static_cast<float>(img.data()[i]);
        std::memcpy(buf.data() + 8 + i * 4, &v, 4);
    }
    detail::write_all(path, buf.data(), buf.size());
}

// ---------------------------------------------------------------------------
// Feature map: magic "LVDF", u32 H, W, N_d, then row-major float32.

inline ImageF load_feature_map(const std::string& path) {
    const auto buf = detail::read_all(path);
    detail::Reader r{buf.data(), buf.size(), 0, path};
    char magic[4];
    r.take_bytes(magic, 4, "magic");
    if (std::memcmp(magic, "LVDF", 4) != 0) throw BadMagic(path + ": not an LVDF feature file");
    const auto h = r.take<std::uint32_t>("height");
    const auto w = r.take<std::uint32_t>("width");
    const auto nd = r.take<std::uint32_t>("feature dimension");
    detail::check_dims(path, h, w, nd);
    ImageF img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(nd));
    for (auto& v : img.data()) v = r.take<float>("feature payload");
    return img;
}

inline void save_feature_map(const std::string& path, const ImageF& img) {
    std::vector<char> buf(16 + img.size() * 4);
    std::memcpy(buf.data(), "LVDF", 4);
    const std::uint32_t h = img.height(), w = img.width(), nd = img.channels();
    std::memcpy(buf.data() + 4, &h, 4);
    std::memcpy(buf.data() + 8, &w, 4);
    std::memcpy(buf.data() + 12, &nd, 4);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const float v = static_cast<float>(img.data()[i]);
        std::memcpy(buf.data() + 16 + i * 4, &v, 4);
    }
    detail::write_all(path, buf.data(), buf.size());
}

// ---------------------------------------------------------------------------
// 8-bit images: binary PGM (P5) for single channel, PPM (P6) for RGB.

namespace detail {

inline ImageU8 load_pnm(const std::string& path, int expected_channels) {
    const auto buf = read_all(path);
    std::string header(buf.begin(), buf.begin() + std::min<std::size_t>(buf.size(), 64));
    std::istringstream hs(header);
    std::string magic;
    std::uint64_t w = 0, h = 0, maxval = 0;
    hs >> magic >> w >> h >> maxval;
    const int channels = magic == "P6" ? 3 : (magic == "P5" ? 1 : 0);
    if (channels == 0) throw BadMagic(path + ": not a binary PGM/PPM file");
    if (channels != expected_channels)
        throw DimensionMismatch(path + ": unexpected channel count");
    if (!hs || maxval != 255) throw TruncatedFile(path + ": malformed PNM header");
    check_dims(path, h, w, channels);
    const std::streampos g = hs.tellg();
    if (g < 0) throw TruncatedFile(path + ": malformed PNM header");
    const std::size_t header_end = static_cast<std::size_t>(g) + 1;  // single whitespace
    const std::size_t need = static_cast<std::size_t>(h) * w * channels;
    if (header_end + need > buf.size()) throw TruncatedFile(path + ": truncated PNM payload");
    ImageU8 img(static_cast<int>(h), static_cast<int>(w), channels);
    std::memcpy(img.data().data(), buf.data() + header_end, need);
    return img;
}

inline void save_pnm(const std::string& path, const ImageU8& img) {
    if (img.channels() != 1 && img.channels() != 3)
        throw IoFailure(path + ": PNM supports 1 or 3 channels");
    std::ostringstream os;
    os << (img.channels() == 3 ? "P6" : "P5") << "\n"
       << img.width() << " " << img.height() << "\n255\n";
    std::string head = os.str();
    std::vector<char> buf(head.size() + img.size());
    std::memcpy(buf.data(), head.data(), head.size());
    std::memcpy(buf.data() + head.size(), img.data().data(), img.size());
    write_all(path, buf.data(), buf.size());
}

}  // namespace detail

inline Mask load_mask(const std::string& path) { return detail::load_pnm(path, 1); }
inline void save_mask(const std::string& path, const Mask& mask) { detail::save_pnm(path, mask); }

inline ImageU8 load_labels(const std::string& path) { return detail::load_pnm(path, 1); }
inline void save_labels(const std::string& path, const ImageU8& labels) {
    detail::save_pnm(path, labels);
}

inline ImageF load_color_image(const std::string& path) {
    const ImageU8 raw = detail::load_pnm(path, 3);
    ImageF img(raw.height(), raw.width(), 3);
    for (std::size_t i = 0; i < raw.size(); ++i) img.data()[i] = raw.data()[i] / 255.0;
    return img;
}

inline void save_color_image(const std::string& path, const ImageF& img) {
    ImageU8 raw(img.height(), img.width(), img.channels());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = std::clamp(img.data()[i], 0.0, 1.0);
        raw.data()[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    detail::save_pnm(path, raw);
}

inline void save_label_image(const std::string& path, const ImageU8& labels) {
    detail::save_pnm(path, labels);
}

// ---------------------------------------------------------------------------
// TUM trajectory: "timestamp tx ty tz qx qy qz qw" per line.

inline void write_trajectory(const Trajectory& trajectory, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoFailure("cannot open " + path + " for writing");
    f.precision(12);
    for (const auto& tp : trajectory) {
        const auto& q = tp.pose.rotation();
        const auto& t = tp.pose.translation();
        f << tp.timestamp << " " << t.x() << " " << t.y() << " " << t.z() << " " << q.x() << " "
          << q.y() << " " << q.z() << " " << q.w() << "\n";
    }
    if (!f) throw IoFailure("short write to " + path);
}

inline Trajectory read_trajectory(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingFile("cannot open " + path);
    Trajectory out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        double ts, tx, ty, tz, qx, qy, qz, qw;
        if (!(ls >> ts >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
            throw IoFailure(path + ":" + std::to_string(lineno) + ": malformed trajectory line");
        out.push_back(
            TimedPose{ts, SE3Pose(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(tx, ty, tz))});
    }
    return out;
}

}  // namespace lvslam::io
