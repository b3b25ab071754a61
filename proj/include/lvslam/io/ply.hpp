// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "lvslam/gaussian_map.hpp"
#include "lvslam/io/formats.hpp"

namespace lvslam::io {

// Gaussian map export: a binary little-endian PLY carrying geometry, opacity
// and RGB, plus an "LVDG" sidecar with the semantic-logit and feature rows.

inline void save_gaussians_ply(const std::string& path, const std::vector<Gaussian>& gaussians) {
    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\n"
           << "element vertex " << gaussians.size() << "\n"
           << "property float x\nproperty float y\nproperty float z\n"
           << "property float scale_0\nproperty float scale_1\nproperty float scale_2\n"
           << "property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\n"
           << "property float opacity\n"
           << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
           << "end_header\n";
    const std::string head = header.str();
    constexpr std::size_t kRecord = 11 * 4 + 3;
    std::vector<char> buf(head.size() + gaussians.size() * kRecord);
    std::memcpy(buf.data(), head.data(), head.size());
    char* p = buf.data() + head.size();
    for (const auto& g : gaussians) {
        const float vals[11] = {
            static_cast<float>(g.position.x()),  static_cast<float>(g.position.y()),
            static_cast<float>(g.position.z()),  static_cast<float>(g.log_scale.x()),
            static_cast<float>(g.log_scale.y()), static_cast<float>(g.log_scale.z()),
            static_cast<float>(g.rotation.w()),  static_cast<float>(g.rotation.x()),
            static_cast<float>(g.rotation.y()),  static_cast<float>(g.rotation.z()),
            static_cast<float>(g.opacity_logit)};
        std::memcpy(p, vals, sizeof(vals));
        p += sizeof(vals);
        for (int ch = 0; ch < 3; ++ch)
            *p++ = static_cast<char>(
                std::lround(std::clamp(g.color[ch], 0.0, 1.0) * 255.0));
    }
    detail::write_all(path, buf.data(), buf.size());
}

inline void save_gaussians_sidecar(const std::string& path,
                                   const std::vector<Gaussian>& gaussians, int num_classes,
                                   int feature_dim) {
    const std::uint32_t count = static_cast<std::uint32_t>(gaussians.size());
    const std::uint32_t l = num_classes, nd = feature_dim;
    std::vector<char> buf(16 + static_cast<std::size_t>(count) * (l + nd) * 4);
    std::memcpy(buf.data(), "LVDG", 4);
    std::memcpy(buf.data() + 4, &count, 4);
    std::memcpy(buf.data() + 8, &l, 4);
    std::memcpy(buf.data() + 12, &nd, 4);
    char* p = buf.data() + 16;
    for (const auto& g : gaussians) {
        for (std::uint32_t i = 0; i < l; ++i) {
            const float v = static_cast<float>(i < g.semantic_logits.size() ? g.semantic_logits[i] : 0.0);
            std::memcpy(p, &v, 4);
            p += 4;
        }
        for (std::uint32_t i = 0; i < nd; ++i) {
            const float v = static_cast<float>(i < g.feature.size() ? g.feature[i] : 0.0);
            std::memcpy(p, &v, 4);
            p += 4;
        }
    }
    detail::write_all(path, buf.data(), buf.size());
}

/// Reads a Gaussian PLY written by save_gaussians_ply. Only that exact
/// property layout is accepted; anything else is rejected with a
/// descriptive error.
inline std::vector<Gaussian> load_gaussians_ply(const std::string& path) {
    const auto buf = detail::read_all(path);
    const std::string end_marker = "end_header\n";
    const std::string text(buf.begin(),
                           buf.begin() + std::min<std::size_t>(buf.size(), 4096));
    if (text.rfind("ply\nformat binary_little_endian 1.0\n", 0) != 0)
        throw BadMagic(path + ": not a binary little-endian PLY");
    const std::size_t end = text.find(end_marker);
    if (end == std::string::npos) throw TruncatedFile(path + ": PLY header has no end_header");
    std::istringstream hs(text.substr(0, end));
    std::string line;
    std::uint64_t count = 0;
    std::vector<std::string> props;
    while (std::getline(hs, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "element") {
            std::string name;
            ls >> name >> count;
            if (name != "vertex") throw BadMagic(path + ": unexpected PLY element " + name);
        } else if (tok == "property") {
            std::string type, name;
            ls >> type >> name;
            props.push_back(type + " " + name);
        }
    }
    const std::vector<std::string> expected = {
        "float x",      "float y",      "float z",     "float scale_0", "float scale_1",
        "float scale_2", "float rot_0",  "float rot_1", "float rot_2",   "float rot_3",
        "float opacity", "uchar red",    "uchar green", "uchar blue"};
    if (props != expected) throw BadMagic(path + ": unsupported PLY property layout");
    if (count > (1ull << 26)) throw TruncatedFile(path + ": implausible vertex count");

    constexpr std::size_t kRecord = 11 * 4 + 3;
    const std::size_t payload = end + end_marker.size();
    if (payload + count * kRecord > buf.size())
        throw TruncatedFile(path + ": truncated PLY payload");

    std::vector<Gaussian> out(count);
    const char* p = buf.data() + payload;
    for (auto& g : out) {
        float vals[11];
        std::memcpy(vals, p, sizeof(vals));
        p += sizeof(vals);
        g.position = Vec3(vals[0], vals[1], vals[2]);
        g.log_scale = Vec3(vals[3], vals[4], vals[5]);
        g.rotation = Eigen::Quaterniond(vals[6], vals[7], vals[8], vals[9]);
        g.opacity_logit = vals[10];
        for (int ch = 0; ch < 3; ++ch)
            g.color[ch] = static_cast<std::uint8_t>(*p++) / 255.0;
    }
    return out;
}

/// Reads the LVDG sidecar and attaches semantic logits and features to the
/// matching Gaussian list.
inline void load_gaussians_sidecar(const std::string& path, std::vector<Gaussian>& gaussians,
                                   int& num_classes, int& feature_dim) {
    const auto buf = detail::read_all(path);
    detail::Reader r{buf.data(), buf.size(), 0, path};
    char magic[4];
    r.take_bytes(magic, 4, "magic");
    if (std::memcmp(magic, "LVDG", 4) != 0) throw BadMagic(path + ": not an LVDG sidecar");
    const auto count = r.take<std::uint32_t>("count");
    const auto l = r.take<std::uint32_t>("class count");
    const auto nd = r.take<std::uint32_t>("feature dimension");
    if (l > 4096 || nd > 4096) throw TruncatedFile(path + ": implausible channel counts");
    if (count != gaussians.size())
        throw DimensionMismatch(path + ": sidecar count does not match the PLY vertex count");
    num_classes = static_cast<int>(l);
    feature_dim = static_cast<int>(nd);
    for (auto& g : gaussians) {
        g.semantic_logits = Eigen::VectorXd(l);
        for (std::uint32_t i = 0; i < l; ++i) g.semantic_logits[i] = r.take<float>("logits");
        g.feature = Eigen::VectorXd(nd);
        for (std::uint32_t i = 0; i < nd; ++i) g.feature[i] = r.take<float>("features");
    }
}

}  // namespace lvslam::io
