#include "latentscope/io.hpp"

#include "latentscope/error.hpp"

#include "text_util.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace latentscope {

namespace binary {

namespace {

template <typename T>
void write_le(std::ostream& out, T v) {
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
        throw FormatError("truncated payload");
    }
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<T>(bytes[i]) << (8 * i);
    }
    return v;
}

}  // namespace

void write_u8(std::ostream& out, std::uint8_t v) { write_le(out, v); }
void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }

std::uint8_t read_u8(std::istream& in) { return read_le<std::uint8_t>(in); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }
float read_f32(std::istream& in) { return std::bit_cast<float>(read_le<std::uint32_t>(in)); }
double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }

}  // namespace binary

namespace {

// Upper bound on voxels per file (2^31), guards against overflowing allocations on corrupt headers.
constexpr std::uint64_t kMaxVoxels = std::uint64_t{1} << 31;

void write_header(std::ostream& out, std::string_view magic, const Dims& dims) {
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    out << dims.x << ' ' << dims.y << ' ' << dims.z << '\n';
}

Dims read_header(std::istream& in, std::string_view magic) {
    std::string got(magic.size(), '\0');
    if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
        throw FormatError("header magic mismatch (expected " + std::string(magic.substr(0, magic.size() - 1)) + ")");
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError("missing dimension line");
    }
    std::istringstream ss(line);
    std::uint64_t d[3] = {0, 0, 0};
    for (auto& v : d) {
        std::string token;
        if (!(ss >> token) || token.empty() || token.find_first_not_of("0123456789") != std::string::npos ||
            token.size() > 10) {
            throw FormatError("malformed dimension line '" + line + "'");
        }
        v = std::stoull(token);
    }
    std::string extra;
    if (ss >> extra) {
        throw FormatError("malformed dimension line '" + line + "'");
    }
    if (d[0] == 0 || d[1] == 0 || d[2] == 0) {
        throw FormatError("dimensions must be positive");
    }
    if (d[0] > kMaxVoxels || d[1] > kMaxVoxels / d[0] || d[2] > kMaxVoxels / (d[0] * d[1])) {
        throw FormatError("dimension overflow in '" + line + "'");
    }
    return Dims{d[0], d[1], d[2]};
}

void expect_eof(std::istream& in) {
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after payload");
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot open '" + path.string() + "' for writing");
    }
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open '" + path.string() + "' for reading");
    }
    return in;
}

}  // namespace

void write_volume(std::ostream& out, const Volume& volume) {
    write_header(out, kVolumeMagic, volume.dims());
    for (float v : volume.voxels()) {
        binary::write_f32(out, v);
    }
}

Volume read_volume(std::istream& in) {
    const Dims dims = read_header(in, kVolumeMagic);
    std::vector<float> voxels(dims.count());
    for (auto& v : voxels) {
        v = binary::read_f32(in);
    }
    expect_eof(in);
    return Volume(dims, std::move(voxels));
}

void save_volume(const Volume& volume, const std::filesystem::path& path) {
    auto out = open_out(path);
    write_volume(out, volume);
    if (!out) {
        throw FormatError("failed writing '" + path.string() + "'");
    }
}

Volume load_volume(const std::filesystem::path& path) {
    auto in = open_in(path);
    try {
        return read_volume(in);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_atlas(const AtlasMap& atlas, const std::filesystem::path& path) {
    auto out = open_out(path);
    write_header(out, kAtlasMagic, atlas.dims());
    for (auto label : atlas.labels()) {
        binary::write_u32(out, label);
    }
}

AtlasMap load_atlas(const std::filesystem::path& path) {
    auto in = open_in(path);
    try {
        const Dims dims = read_header(in, kAtlasMagic);
        std::vector<std::uint32_t> labels(dims.count());
        std::uint32_t max_label = 0;
        for (auto& l : labels) {
            l = binary::read_u32(in);
            max_label = std::max(max_label, l);
        }
        expect_eof(in);
        return AtlasMap(dims, std::move(labels), max_label);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path,
                   const std::vector<std::string>& preamble) {
    auto out = text::open_output(path, preamble);
    out << "id,class_label,volume_path\n";
    for (const auto& e : entries) {
        out << e.id << ',' << class_index(e.label) << ',' << e.volume_path << '\n';
    }
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open '" + path.string() + "' for reading");
    }
    std::string line;
    while (std::getline(in, line) && !line.empty() && line[0] == '#') {
    }
    if (line != "id,class_label,volume_path") {
        throw FormatError(path.string() + ": unexpected manifest header '" + line + "'");
    }
    std::vector<ManifestEntry> entries;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos) {
            throw FormatError(path.string() + ": malformed manifest row '" + line + "'");
        }
        const auto label = parse_class(line.substr(c1 + 1, c2 - c1 - 1));
        if (!label) {
            throw FormatError(path.string() + ": bad class label in row '" + line + "'");
        }
        entries.push_back({line.substr(0, c1), *label, line.substr(c2 + 1)});
    }
    return entries;
}

void save_cohort(const Cohort& cohort, const std::filesystem::path& dir, const std::vector<std::string>& preamble) {
    std::filesystem::create_directories(dir / "volumes");
    std::vector<ManifestEntry> entries;
    for (const auto& s : cohort.subjects) {
        const std::string rel = "volumes/" + s.id + ".lsvol";
        save_volume(s.volume, dir / rel);
        entries.push_back({s.id, s.label, rel});
    }
    save_atlas(cohort.atlas, dir / "atlas.lsatl");
    save_manifest(entries, dir / "manifest.csv", preamble);
}

Cohort load_cohort(const std::filesystem::path& manifest, const std::filesystem::path& atlas) {
    Cohort cohort;
    cohort.atlas = load_atlas(atlas);
    const auto base = manifest.parent_path();
    for (const auto& e : load_manifest(manifest)) {
        std::filesystem::path p = e.volume_path;
        if (p.is_relative()) {
            p = base / p;
        }
        cohort.subjects.push_back({e.id, e.label, load_volume(p)});
    }
    cohort.validate();
    return cohort;
}

}  // namespace latentscope
