#include "latentscope/autoencoder.hpp"

#include "conv3d_kernels.hpp"
#include "latentscope/error.hpp"
#include "latentscope/hash.hpp"
#include "latentscope/rng.hpp"
#include "latentscope/ssim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace latentscope {

std::array<LayerSpec, kLayerCount> standard_architecture() {
    auto conv = [](std::size_t in, std::size_t out) {
        return LayerSpec{LayerKind::Conv3d, in, out, 3, 2, 1, Activation::ReLU, true};
    };
    auto deconv = [](std::size_t in, std::size_t out, Activation act, bool bn) {
        return LayerSpec{LayerKind::ConvTranspose3d, in, out, 3, 2, 1, act, bn};
    };
    return {conv(1, 16),
            conv(16, 32),
            conv(32, 64),
            deconv(64, 32, Activation::ReLU, true),
            deconv(32, 16, Activation::ReLU, true),
            deconv(16, 1, Activation::Sigmoid, false)};
}

namespace {

std::vector<std::span<double>> blocks_of(std::array<LayerParams, kLayerCount>& layers) {
    std::vector<std::span<double>> out;
    for (auto& p : layers) {
        for (auto* v : {&p.weight, &p.bias, &p.gamma, &p.beta}) {
            if (!v->empty()) {
                out.emplace_back(*v);
            }
        }
    }
    return out;
}

}  // namespace

std::vector<std::span<double>> AEParams::parameter_blocks() { return blocks_of(params); }

std::size_t AEParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) {
        n += p.weight.size() + p.bias.size() + p.gamma.size() + p.beta.size();
    }
    return n;
}

AEParams init_params(Dims input_dims, std::uint64_t seed) {
    encoder_grids(input_dims);  // validates the shape chain
    AEParams ae;
    ae.input_dims = input_dims;
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        const auto& spec = ae.layers[l];
        auto& p = ae.params[l];
        Rng rng(derive_seed(seed, 100 + l));
        const std::size_t fan_in =
            (spec.kind == LayerKind::Conv3d ? spec.in_channels : spec.out_channels) * kKernelVolume;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        p.weight.resize(spec.in_channels * spec.out_channels * kKernelVolume);
        for (auto& w : p.weight) {
            w = bound * (2.0 * uniform01(rng) - 1.0);
        }
        p.bias.resize(spec.out_channels);
        for (auto& b : p.bias) {
            b = bound * (2.0 * uniform01(rng) - 1.0);
        }
        if (spec.batch_norm) {
            p.gamma.assign(spec.out_channels, 1.0);
            p.beta.assign(spec.out_channels, 0.0);
            ae.running[l].mean.assign(spec.out_channels, 0.0);
            ae.running[l].var.assign(spec.out_channels, 1.0);
        }
    }
    return ae;
}

std::string_view loss_name(LossKind kind) {
    switch (kind) {
        case LossKind::MSE: return "mse";
        case LossKind::SSIM: return "ssim";
        case LossKind::Combined: return "combined";
    }
    return "?";
}

LossKind parse_loss(std::string_view text) {
    if (text == "mse") return LossKind::MSE;
    if (text == "ssim") return LossKind::SSIM;
    if (text == "combined") return LossKind::Combined;
    throw ConfigError("unknown loss kind '" + std::string(text) + "' (expected mse, ssim or combined)");
}

namespace {

struct LayerTape {
    std::vector<Tensor> input;
    std::vector<Tensor> activated;  // post-activation, pre-normalization
    std::vector<Tensor> xhat;
    std::vector<double> inv_std;
};

using Tape = std::array<LayerTape, kLayerCount>;

void apply_activation(Tensor& t, Activation act) {
    if (act == Activation::ReLU) {
        for (auto& v : t.data) {
            v = v > 0.0 ? v : 0.0;
        }
    } else {
        for (auto& v : t.data) {
            v = 1.0 / (1.0 + std::exp(-v));
        }
    }
}

// Output grid of each layer given the encoder input grid; decoder levels mirror the encoder.
std::array<Dims, kLayerCount> layer_grids(Dims input) {
    const auto enc = encoder_grids(input);
    return {enc[1], enc[2], enc[3], enc[2], enc[1], enc[0]};
}

struct BatchForward {
    std::vector<Tensor> output;
    std::array<std::vector<Tensor>, kEncoderLayers> encoder_out;
    std::array<RunningStats, kLayerCount> batch_stats;
};

BatchForward run_forward(std::span<const Tensor> inputs, const AEParams& ae, Mode mode, Tape* tape,
                         bool keep_encoder) {
    if (inputs.empty()) {
        throw ShapeError("empty batch");
    }
    const Dims grid0 = inputs.front().grid;
    for (const auto& t : inputs) {
        if (t.grid != grid0 || t.channels != 1) {
            throw ShapeError("batch volumes must be single-channel with identical dims");
        }
    }
    const auto grids = layer_grids(grid0);
    const std::size_t batch = inputs.size();

    BatchForward result;
    std::vector<Tensor> cur(inputs.begin(), inputs.end());
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        const auto& spec = ae.layers[l];
        const auto& p = ae.params[l];
        std::vector<Tensor> next;
        next.reserve(batch);
        for (const auto& x : cur) {
            next.push_back(spec.kind == LayerKind::Conv3d ? conv3d_forward(x, spec, p)
                                                          : conv_transpose3d_forward(x, spec, p, grids[l]));
            apply_activation(next.back(), spec.activation);
        }
        if (tape != nullptr) {
            (*tape)[l].input = std::move(cur);
            (*tape)[l].activated = next;
        }
        if (spec.batch_norm) {
            const std::size_t channels = spec.out_channels;
            const std::size_t per = grids[l].count();
            const double m = static_cast<double>(per * batch);
            std::vector<double> mean(channels), var(channels);
            if (mode == Mode::Train) {
                for (std::size_t c = 0; c < channels; ++c) {
                    double s = 0.0;
                    for (const auto& t : next) {
                        for (double v : t.channel(c)) s += v;
                    }
                    mean[c] = s / m;
                    double ss = 0.0;
                    for (const auto& t : next) {
                        for (double v : t.channel(c)) ss += (v - mean[c]) * (v - mean[c]);
                    }
                    var[c] = ss / m;
                }
                result.batch_stats[l].mean = mean;
                result.batch_stats[l].var.resize(channels);
                for (std::size_t c = 0; c < channels; ++c) {
                    result.batch_stats[l].var[c] = m > 1.0 ? var[c] * m / (m - 1.0) : var[c];
                }
            } else {
                mean = ae.running[l].mean;
                var = ae.running[l].var;
            }
            std::vector<double> inv_std(channels);
            for (std::size_t c = 0; c < channels; ++c) {
                inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEps);
            }
            if (tape != nullptr) {
                (*tape)[l].inv_std = inv_std;
                (*tape)[l].xhat.clear();
            }
            for (auto& t : next) {
                Tensor xhat;
                if (tape != nullptr) xhat = Tensor(channels, t.grid);
                for (std::size_t c = 0; c < channels; ++c) {
                    auto ch = t.channel(c);
                    for (std::size_t i = 0; i < ch.size(); ++i) {
                        const double xh = (ch[i] - mean[c]) * inv_std[c];
                        if (tape != nullptr) xhat.channel(c)[i] = xh;
                        ch[i] = p.gamma[c] * xh + p.beta[c];
                    }
                }
                if (tape != nullptr) (*tape)[l].xhat.push_back(std::move(xhat));
            }
        }
        if (keep_encoder && l < kEncoderLayers) {
            result.encoder_out[l] = next;
        }
        cur = std::move(next);
    }
    result.output = std::move(cur);
    return result;
}

void check_same(std::span<const double> a, std::span<const double> b, Dims dims) {
    if (a.size() != b.size() || a.size() != dims.count()) {
        throw ShapeError("loss operands must share dims " + to_string(dims));
    }
}

// Loss of one volume and, when grad is non-empty, d loss / d reconstruction.
double loss_and_grad(std::span<const double> r, std::span<const double> t, Dims dims, LossKind kind, double alpha,
                     std::span<double> grad) {
    check_same(r, t, dims);
    const double n = static_cast<double>(r.size());
    double mse = 0.0;
    if (kind != LossKind::SSIM) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            mse += (r[i] - t[i]) * (r[i] - t[i]);
        }
        mse /= n;
    }
    double s = 1.0;
    std::vector<double> gs;
    if (kind != LossKind::MSE) {
        if (grad.empty()) {
            s = ssim(r, t, dims);
        } else {
            gs.resize(r.size());
            s = ssim_with_gradient(r, t, dims, gs);
        }
    }
    const double w_mse = kind == LossKind::MSE ? 1.0 : (kind == LossKind::SSIM ? 0.0 : alpha);
    const double w_ssim = kind == LossKind::MSE ? 0.0 : (kind == LossKind::SSIM ? 1.0 : 1.0 - alpha);
    if (!grad.empty()) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            double g = 0.0;
            if (w_mse != 0.0) g += w_mse * 2.0 * (r[i] - t[i]) / n;
            if (w_ssim != 0.0) g -= w_ssim * gs[i];
            grad[i] = g;
        }
    }
    return w_mse * mse + w_ssim * (1.0 - s);
}

void check_alpha(double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ConfigError("alpha must lie in [0,1]");
    }
}

ActivationSet to_activation_set(const BatchForward& fwd, std::size_t sample) {
    ActivationSet set;
    for (std::size_t l = 0; l < kEncoderLayers; ++l) {
        const auto& t = fwd.encoder_out[l][sample];
        set.channels[l] = t.channels;
        set.grids[l] = t.grid;
        set.layers[l].resize(t.data.size());
        std::transform(t.data.begin(), t.data.end(), set.layers[l].begin(),
                       [](double v) { return static_cast<float>(v); });
    }
    return set;
}

}  // namespace

ForwardResult forward(const Volume& volume, const AEParams& params, Mode mode) {
    const Tensor input = Tensor::from_volume(volume);
    auto fwd = run_forward(std::span(&input, 1), params, mode, nullptr, true);
    return {fwd.output.front().to_volume(), to_activation_set(fwd, 0)};
}

std::vector<Tensor> forward_batch(std::span<const Tensor> inputs, const AEParams& params, Mode mode) {
    return run_forward(inputs, params, mode, nullptr, false).output;
}

double loss(std::span<const double> reconstruction, std::span<const double> target, Dims dims, LossKind kind,
            double alpha) {
    check_alpha(alpha);
    return loss_and_grad(reconstruction, target, dims, kind, alpha, {});
}

double loss(const Volume& reconstruction, const Volume& target, LossKind kind, double alpha) {
    if (reconstruction.dims() != target.dims()) {
        throw ShapeError("loss operands differ in dims: " + to_string(reconstruction.dims()) + " vs " +
                         to_string(target.dims()));
    }
    const std::vector<double> r(reconstruction.voxels().begin(), reconstruction.voxels().end());
    const std::vector<double> t(target.voxels().begin(), target.voxels().end());
    return loss(r, t, reconstruction.dims(), kind, alpha);
}

double batch_loss(std::span<const Tensor> inputs, std::span<const Tensor> targets, const AEParams& params,
                  LossKind kind, double alpha) {
    check_alpha(alpha);
    if (inputs.size() != targets.size()) {
        throw ShapeError("inputs and targets differ in batch size");
    }
    const auto out = forward_batch(inputs, params, Mode::Train);
    double total = 0.0;
    for (std::size_t b = 0; b < out.size(); ++b) {
        total += loss_and_grad(out[b].data, targets[b].data, out[b].grid, kind, alpha, {});
    }
    return total / static_cast<double>(out.size());
}

BackwardResult backward(std::span<const Tensor> inputs, std::span<const Tensor> targets, const AEParams& params,
                        LossKind kind, double alpha, double loss_scale) {
    check_alpha(alpha);
    if (inputs.size() != targets.size()) {
        throw ShapeError("inputs and targets differ in batch size");
    }
    Tape tape;
    auto fwd = run_forward(inputs, params, Mode::Train, &tape, false);
    const std::size_t batch = inputs.size();
    const double scale = loss_scale / static_cast<double>(batch);

    BackwardResult result;
    result.batch_stats = fwd.batch_stats;
    std::vector<Tensor> dout;
    dout.reserve(batch);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        Tensor g(1, fwd.output[b].grid);
        total += loss_and_grad(fwd.output[b].data, targets[b].data, g.grid, kind, alpha, g.data);
        for (auto& v : g.data) v *= scale;
        dout.push_back(std::move(g));
    }
    result.loss = loss_scale * total / static_cast<double>(batch);

    for (std::size_t li = kLayerCount; li-- > 0;) {
        const auto& spec = params.layers[li];
        const auto& p = params.params[li];
        auto& grad = result.gradients[li];
        auto& lt = tape[li];
        const std::size_t channels = spec.out_channels;
        grad.weight.assign(p.weight.size(), 0.0);
        grad.bias.assign(channels, 0.0);

        if (spec.batch_norm) {
            grad.gamma.assign(channels, 0.0);
            grad.beta.assign(channels, 0.0);
            const double m = static_cast<double>(dout.front().grid.count() * batch);
            for (std::size_t c = 0; c < channels; ++c) {
                double sum_dy = 0.0, sum_dy_xh = 0.0;
                for (std::size_t b = 0; b < batch; ++b) {
                    auto dy = dout[b].channel(c);
                    auto xh = lt.xhat[b].channel(c);
                    for (std::size_t i = 0; i < dy.size(); ++i) {
                        sum_dy += dy[i];
                        sum_dy_xh += dy[i] * xh[i];
                    }
                }
                grad.gamma[c] = sum_dy_xh;
                grad.beta[c] = sum_dy;
                // d xhat = gamma dy, so its sums follow from the two above.
                const double g = p.gamma[c];
                const double k = lt.inv_std[c] / m;
                for (std::size_t b = 0; b < batch; ++b) {
                    auto dy = dout[b].channel(c);
                    auto xh = lt.xhat[b].channel(c);
                    for (std::size_t i = 0; i < dy.size(); ++i) {
                        dy[i] = k * g * (m * dy[i] - sum_dy - xh[i] * sum_dy_xh);
                    }
                }
            }
        }

        for (std::size_t b = 0; b < batch; ++b) {
            auto& d = dout[b];
            const auto& a = lt.activated[b];
            if (spec.activation == Activation::ReLU) {
                for (std::size_t i = 0; i < d.data.size(); ++i) {
                    if (a.data[i] <= 0.0) d.data[i] = 0.0;
                }
            } else {
                for (std::size_t i = 0; i < d.data.size(); ++i) {
                    d.data[i] *= a.data[i] * (1.0 - a.data[i]);
                }
            }
            for (std::size_t c = 0; c < channels; ++c) {
                for (double v : d.channel(c)) grad.bias[c] += v;
            }
        }

        std::vector<Tensor> din;
        if (li > 0) din.reserve(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            const auto& x = lt.input[b];
            const auto& d = dout[b];
            if (spec.kind == LayerKind::Conv3d) {
                kernels::weight_grad(d, x, grad.weight);
                if (li > 0) {
                    Tensor dx(x.channels, x.grid);
                    kernels::scatter(d, dx, p.weight);
                    din.push_back(std::move(dx));
                }
            } else {
                kernels::weight_grad(x, d, grad.weight);
                if (li > 0) {
                    Tensor dx(x.channels, x.grid);
                    kernels::gather(dx, d, p.weight);
                    din.push_back(std::move(dx));
                }
            }
        }
        lt = LayerTape{};
        dout = std::move(din);
    }
    return result;
}

std::uint64_t params_hash(const AEParams& params) {
    Fnv1a h;
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        const auto& p = params.params[l];
        for (const auto* v : {&p.weight, &p.bias, &p.gamma, &p.beta, &params.running[l].mean, &params.running[l].var}) {
            h.add(static_cast<std::uint64_t>(v->size()));
            h.add(std::span<const double>(*v));
        }
    }
    return h.value();
}

TrainResult train(const Cohort& cohort, const TrainConfig& config, const EpochCallback& on_epoch) {
    if (cohort.subjects.empty()) {
        throw ConfigError("cannot train on an empty cohort");
    }
    check_alpha(config.alpha);
    if (config.batch_size == 0) {
        throw ConfigError("batch_size must be positive");
    }
    if (config.max_epochs == 0 || config.patience > config.max_epochs) {
        throw ConfigError("need max_epochs >= 1 and patience <= max_epochs");
    }
    if (!(config.learning_rate > 0.0)) {
        throw ConfigError("learning_rate must be positive");
    }
    const Dims dims = cohort.subjects.front().volume.dims();
    std::vector<Tensor> data;
    data.reserve(cohort.size());
    for (const auto& s : cohort.subjects) {
        if (s.volume.dims() != dims) {
            throw ShapeError("subject " + s.id + " has dims " + to_string(s.volume.dims()) + ", expected " +
                             to_string(dims));
        }
        data.push_back(Tensor::from_volume(s.volume));
    }

    TrainResult result{init_params(dims, derive_seed(config.seed, 1)), {}};
    auto& ae = result.params;
    auto param_blocks = ae.parameter_blocks();
    std::vector<std::vector<double>> m1, m2;
    for (auto& b : param_blocks) {
        m1.emplace_back(b.size(), 0.0);
        m2.emplace_back(b.size(), 0.0);
    }
    Rng shuffle_rng(derive_seed(config.seed, 2));
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::uint64_t step = 0;
    double best = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform01(shuffle_rng) * static_cast<double>(i));
            std::swap(order[i - 1], order[std::min(j, i - 1)]);
        }
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<Tensor> batch;
            for (std::size_t k = start; k < end; ++k) batch.push_back(data[order[k]]);
            auto br = backward(batch, batch, ae, config.loss_kind, config.alpha);
            if (!std::isfinite(br.loss)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches + 1));
            }
            loss_sum += br.loss;
            ++batches;

            ++step;
            const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
            auto grad_blocks = blocks_of(br.gradients);
            for (std::size_t k = 0; k < param_blocks.size(); ++k) {
                auto pb = param_blocks[k];
                auto gb = grad_blocks[k];
                for (std::size_t i = 0; i < pb.size(); ++i) {
                    const double g = gb[i];
                    m1[k][i] = config.beta1 * m1[k][i] + (1.0 - config.beta1) * g;
                    m2[k][i] = config.beta2 * m2[k][i] + (1.0 - config.beta2) * g * g;
                    pb[i] -= config.learning_rate * (m1[k][i] / c1) / (std::sqrt(m2[k][i] / c2) + config.epsilon);
                }
            }
            for (std::size_t l = 0; l < kLayerCount; ++l) {
                if (!ae.layers[l].batch_norm) continue;
                auto& run = ae.running[l];
                const auto& bs = br.batch_stats[l];
                for (std::size_t c = 0; c < run.mean.size(); ++c) {
                    run.mean[c] = (1.0 - kBatchNormMomentum) * run.mean[c] + kBatchNormMomentum * bs.mean[c];
                    run.var[c] = (1.0 - kBatchNormMomentum) * run.var[c] + kBatchNormMomentum * bs.var[c];
                }
            }
        }
        const double epoch_loss = loss_sum / static_cast<double>(batches);
        result.report.epoch_loss.push_back(epoch_loss);
        result.report.stopped_epoch = epoch;
        if (on_epoch) on_epoch(epoch, epoch_loss);
        if (epoch_loss < best) {
            best = epoch_loss;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    result.report.params_hash = params_hash(ae);
    return result;
}

std::vector<ActivationSet> extract_activations(const Cohort& cohort, const AEParams& params) {
    std::vector<ActivationSet> out;
    out.reserve(cohort.size());
    for (const auto& s : cohort.subjects) {
        const Tensor input = Tensor::from_volume(s.volume);
        auto fwd = run_forward(std::span(&input, 1), params, Mode::Eval, nullptr, true);
        out.push_back(to_activation_set(fwd, 0));
    }
    return out;
}

}  // namespace latentscope
