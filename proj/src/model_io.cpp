#include "latentscope/autoencoder.hpp"
#include "latentscope/error.hpp"
#include "latentscope/io.hpp"

#include "text_util.hpp"

#include <fstream>

namespace latentscope {

namespace {

constexpr std::string_view kModelMagic = "LSAE1\n";
constexpr std::uint32_t kModelVersion = 1;

void write_array(std::ostream& out, const std::vector<double>& v) {
    binary::write_u64(out, v.size());
    for (double x : v) binary::write_f64(out, x);
}

std::vector<double> read_array(std::istream& in, std::size_t expected, const char* what) {
    const auto n = binary::read_u64(in);
    if (n != expected) {
        throw FormatError(std::string("model ") + what + " has " + std::to_string(n) + " values, expected " +
                          std::to_string(expected));
    }
    std::vector<double> v(n);
    for (auto& x : v) x = binary::read_f64(in);
    return v;
}

}  // namespace

void save_model(const AEParams& params, const std::filesystem::path& path, std::uint64_t config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    out.write(kModelMagic.data(), static_cast<std::streamsize>(kModelMagic.size()));
    binary::write_u32(out, kModelVersion);
    binary::write_u64(out, config_hash);
    for (auto d : params.input_dims.as_array()) binary::write_u32(out, static_cast<std::uint32_t>(d));
    binary::write_u32(out, static_cast<std::uint32_t>(kLayerCount));
    for (const auto& s : params.layers) {
        binary::write_u8(out, static_cast<std::uint8_t>(s.kind));
        binary::write_u32(out, static_cast<std::uint32_t>(s.in_channels));
        binary::write_u32(out, static_cast<std::uint32_t>(s.out_channels));
        binary::write_u32(out, static_cast<std::uint32_t>(s.kernel));
        binary::write_u32(out, static_cast<std::uint32_t>(s.stride));
        binary::write_u32(out, static_cast<std::uint32_t>(s.padding));
        binary::write_u8(out, static_cast<std::uint8_t>(s.activation));
        binary::write_u8(out, s.batch_norm ? 1 : 0);
    }
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        const auto& p = params.params[l];
        write_array(out, p.weight);
        write_array(out, p.bias);
        write_array(out, p.gamma);
        write_array(out, p.beta);
        write_array(out, params.running[l].mean);
        write_array(out, params.running[l].var);
    }
    if (!out) {
        throw FormatError("failed writing " + path.string());
    }
}

AEParams load_model(const std::filesystem::path& path, std::uint64_t* config_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open model " + path.string());
    }
    std::string magic(kModelMagic.size(), '\0');
    in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    if (!in || magic != kModelMagic) {
        throw FormatError(path.string() + " is not a model file (header magic mismatch)");
    }
    if (const auto version = binary::read_u32(in); version != kModelVersion) {
        throw FormatError("unsupported model version " + std::to_string(version));
    }
    const auto hash = binary::read_u64(in);
    if (config_hash != nullptr) *config_hash = hash;

    AEParams ae;
    const auto dx = binary::read_u32(in);
    const auto dy = binary::read_u32(in);
    const auto dz = binary::read_u32(in);
    ae.input_dims = {dx, dy, dz};
    if (binary::read_u32(in) != kLayerCount) {
        throw FormatError("model layer count mismatch");
    }
    for (auto& s : ae.layers) {
        LayerSpec read;
        read.kind = static_cast<LayerKind>(binary::read_u8(in));
        read.in_channels = binary::read_u32(in);
        read.out_channels = binary::read_u32(in);
        read.kernel = binary::read_u32(in);
        read.stride = binary::read_u32(in);
        read.padding = binary::read_u32(in);
        read.activation = static_cast<Activation>(binary::read_u8(in));
        read.batch_norm = binary::read_u8(in) != 0;
        if (read != s) {
            throw FormatError("model layer table does not match the standard architecture");
        }
    }
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        const auto& s = ae.layers[l];
        auto& p = ae.params[l];
        const std::size_t bn = s.batch_norm ? s.out_channels : 0;
        p.weight = read_array(in, s.in_channels * s.out_channels * kKernelVolume, "weight");
        p.bias = read_array(in, s.out_channels, "bias");
        p.gamma = read_array(in, bn, "gamma");
        p.beta = read_array(in, bn, "beta");
        ae.running[l].mean = read_array(in, bn, "running mean");
        ae.running[l].var = read_array(in, bn, "running var");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after model payload");
    }
    return ae;
}

void save_train_report(const TrainReport& report, const std::filesystem::path& path,
                       const std::vector<std::string>& preamble) {
    auto out = text::open_output(path, preamble);
    out << "epoch,mean_loss\n";
    char buf[64];
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1, report.epoch_loss[e]);
        out << buf;
    }
}

}  // namespace latentscope
