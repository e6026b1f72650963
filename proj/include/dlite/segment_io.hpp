#pragma once

// On-disk container for segment datasets. A dataset pair is a directory
// holding:
//   data.bin      magic "DLSEG\0", u16 version=1, u32 N, u32 C, u32 T,
//                 then N*C*T little-endian float32, segment-major row-major
//   manifest.json {dataset_id, sample_rate_hz, n, channels, samples,
//                  subject_ids: [...], source_notes}
// Loading preserves on-disk order exactly and round-trips bit-for-bit.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dlite/errors.hpp"

namespace dlite::signal {

struct SegmentSet {
    std::int64_t n = 0;
    std::int64_t channels = 0;
    std::int64_t samples = 0;
    std::vector<float> data;  // n * channels * samples
    double sample_rate_hz = 200.0;
    std::vector<std::string> subject_ids;
    std::string dataset_id;
    std::string source_notes;

    std::int64_t segment_size() const { return channels * samples; }

    const float* segment(std::int64_t i) const { return data.data() + i * segment_size(); }
    float* segment(std::int64_t i) { return data.data() + i * segment_size(); }

    // New set containing the rows of `indices`, order as given.
    SegmentSet subset(const std::vector<std::int64_t>& indices) const {
        SegmentSet out;
        out.channels = channels;
        out.samples = samples;
        out.sample_rate_hz = sample_rate_hz;
        out.dataset_id = dataset_id;
        out.source_notes = source_notes;
        out.n = static_cast<std::int64_t>(indices.size());
        out.data.reserve(out.n * segment_size());
        out.subject_ids.reserve(indices.size());
        for (const auto i : indices) {
            if (i < 0 || i >= n)
                throw IntegrityError("subset: segment index " + std::to_string(i) +
                                     " out of range for n=" + std::to_string(n));
            out.data.insert(out.data.end(), segment(i), segment(i) + segment_size());
            out.subject_ids.push_back(subject_ids.empty() ? std::string() : subject_ids[i]);
        }
        return out;
    }
};

namespace detail {

constexpr char kMagic[6] = {'D', 'L', 'S', 'E', 'G', '\0'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_le(std::ofstream& out, T v) {
    // this codebase targets little-endian hosts; serialize verbatim
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace detail

inline void write_segment_blob(const std::filesystem::path& file, const SegmentSet& set) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IntegrityError("write_segment_blob: cannot open " + file.string());
    out.write(detail::kMagic, sizeof(detail::kMagic));
    detail::write_le<std::uint16_t>(out, detail::kVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.n));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.channels));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.samples));
    out.write(reinterpret_cast<const char*>(set.data.data()),
              static_cast<std::streamsize>(set.data.size() * sizeof(float)));
    if (!out) throw IntegrityError("write_segment_blob: short write to " + file.string());
}

inline nlohmann::ordered_json manifest_json(const SegmentSet& set) {
    nlohmann::ordered_json j;
    j["dataset_id"] = set.dataset_id;
    j["sample_rate_hz"] = set.sample_rate_hz;
    j["n"] = set.n;
    j["channels"] = set.channels;
    j["samples"] = set.samples;
    j["subject_ids"] = set.subject_ids;
    j["source_notes"] = set.source_notes;
    return j;
}

// Writes data.bin + manifest.json into `dir` (created if needed).
inline void write_segment_set(const std::filesystem::path& dir, const SegmentSet& set) {
    if (set.n != static_cast<std::int64_t>(set.subject_ids.size()))
        throw IntegrityError("write_segment_set: subject_ids must have one entry per segment");
    std::filesystem::create_directories(dir);
    write_segment_blob(dir / "data.bin", set);
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IntegrityError("write_segment_set: cannot open manifest in " + dir.string());
    out << manifest_json(set).dump(2) << "\n";
}

inline SegmentSet load_segment_set(const std::filesystem::path& dir) {
    const auto blob_path = dir / "data.bin";
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(blob_path, std::ios::binary);
    if (!in) throw FormatError("load_segment_set: missing " + blob_path.string());

    char magic[6];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, detail::kMagic, sizeof(magic)) != 0)
        throw FormatError("load_segment_set: bad magic in " + blob_path.string());
    const auto version = detail::read_le<std::uint16_t>(in);
    if (version != detail::kVersion)
        throw FormatError("load_segment_set: unsupported version " + std::to_string(version));

    SegmentSet set;
    set.n = detail::read_le<std::uint32_t>(in);
    set.channels = detail::read_le<std::uint32_t>(in);
    set.samples = detail::read_le<std::uint32_t>(in);
    if (!in) throw FormatError("load_segment_set: truncated header in " + blob_path.string());

    const std::int64_t count = set.n * set.channels * set.samples;
    set.data.resize(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(set.data.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float)))
        throw IntegrityError("load_segment_set: blob holds fewer samples than header claims");
    char extra;
    if (in.read(&extra, 1))
        throw IntegrityError("load_segment_set: blob holds trailing bytes beyond header claim");
    for (const float v : set.data) {
        if (!std::isfinite(v))
            throw IntegrityError("load_segment_set: non-finite sample in " + blob_path.string());
    }

    std::ifstream min(manifest_path);
    if (!min) throw FormatError("load_segment_set: missing " + manifest_path.string());
    nlohmann::json j;
    try {
        min >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_segment_set: invalid manifest JSON: " + std::string(e.what()));
    }
    try {
        set.dataset_id = j.at("dataset_id").get<std::string>();
        set.sample_rate_hz = j.at("sample_rate_hz").get<double>();
        set.subject_ids = j.at("subject_ids").get<std::vector<std::string>>();
        set.source_notes = j.value("source_notes", std::string());
        const auto mn = j.at("n").get<std::int64_t>();
        const auto mc = j.at("channels").get<std::int64_t>();
        const auto mt = j.at("samples").get<std::int64_t>();
        if (mn != set.n || mc != set.channels || mt != set.samples)
            throw IntegrityError("load_segment_set: manifest disagrees with blob header (n=" +
                                 std::to_string(mn) + "/" + std::to_string(set.n) + ", c=" +
                                 std::to_string(mc) + "/" + std::to_string(set.channels) +
                                 ", t=" + std::to_string(mt) + "/" + std::to_string(set.samples) +
                                 ")");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_segment_set: manifest missing field: " + std::string(e.what()));
    }
    if (static_cast<std::int64_t>(set.subject_ids.size()) != set.n)
        throw IntegrityError("load_segment_set: subject_ids count does not match n");
    if (set.sample_rate_hz <= 0.0)
        throw IntegrityError("load_segment_set: sample_rate_hz must be positive");
    return set;
}

}  // namespace dlite::signal
