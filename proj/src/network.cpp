#include "rumkit/network.hpp"

#include <cmath>
#include <limits>

#include "rumkit/random.hpp"

namespace rumkit {

std::string to_string(Architecture a) {
    switch (a) {
        case Architecture::kMlp: return "mlp";
        case Architecture::kSmallCnn: return "small-cnn";
        case Architecture::kResnetTiny: return "resnet-ish-tiny";
    }
    return "mlp";
}

Architecture parse_architecture(std::string_view tag) {
    if (tag == "mlp") return Architecture::kMlp;
    if (tag == "small-cnn") return Architecture::kSmallCnn;
    if (tag == "resnet-ish-tiny") return Architecture::kResnetTiny;
    throw InvalidArgument("unknown architecture '" + std::string(tag) + "'");
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using MutMap = Eigen::Map<Eigen::MatrixXd>;

Eigen::MatrixXd im2col(const Eigen::RowVectorXd& x, const layers::Conv3x3& c) {
    const int hw = c.height * c.width;
    Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(c.in_channels * 9, hw);
    for (int ci = 0; ci < c.in_channels; ++ci) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const int row = ci * 9 + ky * 3 + kx;
                for (int y = 0; y < c.height; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= c.height) continue;
                    for (int xx = 0; xx < c.width; ++xx) {
                        const int sx = xx + kx - 1;
                        if (sx < 0 || sx >= c.width) continue;
                        cols(row, y * c.width + xx) = x[ci * hw + sy * c.width + sx];
                    }
                }
            }
        }
    }
    return cols;
}

void col2im_add(const Eigen::MatrixXd& dcols, const layers::Conv3x3& c, Eigen::RowVectorXd& dx) {
    const int hw = c.height * c.width;
    for (int ci = 0; ci < c.in_channels; ++ci) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const int row = ci * 9 + ky * 3 + kx;
                for (int y = 0; y < c.height; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= c.height) continue;
                    for (int xx = 0; xx < c.width; ++xx) {
                        const int sx = xx + kx - 1;
                        if (sx < 0 || sx >= c.width) continue;
                        dx[ci * hw + sy * c.width + sx] += dcols(row, y * c.width + xx);
                    }
                }
            }
        }
    }
}

}  // namespace

Network::Network(Architecture architecture, FeatureShape input, int num_classes, int hidden_width)
    : architecture_(architecture), input_(input), num_classes_(num_classes), hidden_width_(hidden_width) {
    if (num_classes < 2) throw InvalidArgument("network needs at least 2 classes");
    if (hidden_width < 1) throw InvalidArgument("hidden width must be positive");
    const int d = input.size();
    Eigen::Index total = 0;
    auto reserve = [&](Eigen::Index n) {
        const Eigen::Index at = total;
        total += n;
        return at;
    };
    switch (architecture) {
        case Architecture::kMlp: {
            layers_.push_back(layers::Dense{d, hidden_width, reserve(Eigen::Index{d + 1} * hidden_width)});
            layers_.push_back(layers::Relu{});
            layers_.push_back(layers::Dense{hidden_width, hidden_width,
                                            reserve(Eigen::Index{hidden_width + 1} * hidden_width)});
            layers_.push_back(layers::Relu{});
            layers_.push_back(layers::Dense{hidden_width, num_classes,
                                            reserve(Eigen::Index{hidden_width + 1} * num_classes)});
            break;
        }
        case Architecture::kResnetTiny: {
            const Eigen::Index hh = Eigen::Index{hidden_width + 1} * hidden_width;
            layers_.push_back(layers::Dense{d, hidden_width, reserve(Eigen::Index{d + 1} * hidden_width)});
            layers_.push_back(layers::Relu{});  // activation 2 feeds the skip
            layers_.push_back(layers::Dense{hidden_width, hidden_width, reserve(hh)});
            layers_.push_back(layers::Relu{});
            layers_.push_back(layers::Dense{hidden_width, hidden_width, reserve(hh)});
            layers_.push_back(layers::AddSkip{2});
            layers_.push_back(layers::Relu{});
            layers_.push_back(layers::Dense{hidden_width, num_classes,
                                            reserve(Eigen::Index{hidden_width + 1} * num_classes)});
            break;
        }
        case Architecture::kSmallCnn: {
            if (!input.is_image() || input.height < 4 || input.width < 4) {
                throw InvalidArgument("small-cnn needs image input of at least 4x4");
            }
            constexpr int c1 = 8;
            constexpr int c2 = 16;
            int h = input.height;
            int w = input.width;
            layers_.push_back(layers::Conv3x3{input.channels, c1, h, w,
                                              reserve(Eigen::Index{c1} * input.channels * 9 + c1)});
            layers_.push_back(layers::Relu{});
            layers_.push_back(layers::MaxPool2{c1, h, w});
            h /= 2;
            w /= 2;
            layers_.push_back(layers::Conv3x3{c1, c2, h, w, reserve(Eigen::Index{c2} * c1 * 9 + c2)});
            layers_.push_back(layers::Relu{});
            layers_.push_back(layers::MaxPool2{c2, h, w});
            h /= 2;
            w /= 2;
            const int flat = c2 * h * w;
            layers_.push_back(layers::Dense{flat, num_classes, reserve(Eigen::Index{flat + 1} * num_classes)});
            break;
        }
    }
    params_ = Eigen::VectorXd::Zero(total);
}

int Network::embedding_dim() const noexcept {
    if (layers_.empty()) return 0;
    return std::get<layers::Dense>(layers_.back()).in;
}

void Network::initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 101));
    params_.setZero();
    for (const auto& layer : layers_) {
        if (const auto* d = std::get_if<layers::Dense>(&layer)) {
            const double std = std::sqrt(2.0 / d->in);
            for (Eigen::Index i = 0; i < Eigen::Index{d->in} * d->out; ++i) params_[d->offset + i] = std * rng.normal();
        } else if (const auto* c = std::get_if<layers::Conv3x3>(&layer)) {
            const double std = std::sqrt(2.0 / (c->in_channels * 9));
            const Eigen::Index n = Eigen::Index{c->out_channels} * c->in_channels * 9;
            for (Eigen::Index i = 0; i < n; ++i) params_[c->offset + i] = std * rng.normal();
        }
    }
}

Eigen::MatrixXd Network::run(const Eigen::MatrixXd& input, std::size_t stop, Cache* cache) const {
    if (input.cols() != input_.size()) {
        throw InvalidArgument("input width " + std::to_string(input.cols()) +
                              " does not match network input " + std::to_string(input_.size()));
    }
    const Eigen::Index batch = input.rows();
    std::vector<Eigen::MatrixXd> local;
    std::vector<Eigen::MatrixXd>& acts = cache ? cache->activations : local;
    acts.clear();
    acts.reserve(stop + 1);
    acts.push_back(input);
    if (cache) cache->pool_argmax.assign(layers_.size(), {});

    for (std::size_t l = 0; l < stop; ++l) {
        const Eigen::MatrixXd& x = acts.back();
        Eigen::MatrixXd y = std::visit(
            Overloaded{
                [&](const layers::Dense& d) -> Eigen::MatrixXd {
                    ConstMap w(params_.data() + d.offset, d.out, d.in);
                    Eigen::Map<const Eigen::VectorXd> b(params_.data() + d.offset + Eigen::Index{d.out} * d.in, d.out);
                    Eigen::MatrixXd out = x * w.transpose();
                    out.rowwise() += b.transpose();
                    return out;
                },
                [&](const layers::Relu&) -> Eigen::MatrixXd { return x.cwiseMax(0.0); },
                [&](const layers::Conv3x3& c) -> Eigen::MatrixXd {
                    const int hw = c.height * c.width;
                    ConstMap w(params_.data() + c.offset, c.out_channels, c.in_channels * 9);
                    Eigen::Map<const Eigen::VectorXd> b(
                        params_.data() + c.offset + Eigen::Index{c.out_channels} * c.in_channels * 9, c.out_channels);
                    Eigen::MatrixXd out(batch, Eigen::Index{c.out_channels} * hw);
                    for (Eigen::Index r = 0; r < batch; ++r) {
                        const Eigen::RowVectorXd xr = x.row(r);
                        // (hw x out) column-major == channel-major flattened row.
                        Eigen::MatrixXd yt = im2col(xr, c).transpose() * w.transpose();
                        yt.rowwise() += b.transpose();
                        out.row(r) = Eigen::Map<const Eigen::RowVectorXd>(yt.data(), yt.size());
                    }
                    return out;
                },
                [&](const layers::MaxPool2& p) -> Eigen::MatrixXd {
                    const int oh = p.height / 2;
                    const int ow = p.width / 2;
                    const Eigen::Index osize = Eigen::Index{p.channels} * oh * ow;
                    Eigen::MatrixXd out(batch, osize);
                    std::vector<Eigen::Index>* argmax = cache ? &cache->pool_argmax[l] : nullptr;
                    if (argmax) argmax->assign(static_cast<std::size_t>(batch * osize), 0);
                    for (Eigen::Index r = 0; r < batch; ++r) {
                        for (int c = 0; c < p.channels; ++c) {
                            for (int oy = 0; oy < oh; ++oy) {
                                for (int ox = 0; ox < ow; ++ox) {
                                    double best = -std::numeric_limits<double>::infinity();
                                    Eigen::Index best_at = 0;
                                    for (int dy = 0; dy < 2; ++dy) {
                                        for (int dx = 0; dx < 2; ++dx) {
                                            const Eigen::Index at = Eigen::Index{c} * p.height * p.width +
                                                                    Eigen::Index{2 * oy + dy} * p.width + (2 * ox + dx);
                                            if (x(r, at) > best) {
                                                best = x(r, at);
                                                best_at = at;
                                            }
                                        }
                                    }
                                    const Eigen::Index o = Eigen::Index{c} * oh * ow + Eigen::Index{oy} * ow + ox;
                                    out(r, o) = best;
                                    if (argmax) (*argmax)[static_cast<std::size_t>(r * osize + o)] = best_at;
                                }
                            }
                        }
                    }
                    return out;
                },
                [&](const layers::AddSkip& s) -> Eigen::MatrixXd {
                    return x + acts[static_cast<std::size_t>(s.source)];
                },
            },
            layers_[l]);
        acts.push_back(std::move(y));
    }
    if (cache) return acts.back();
    return std::move(acts.back());
}

Eigen::MatrixXd Network::forward(const Eigen::MatrixXd& input, Cache* cache) const {
    return run(input, layers_.size(), cache);
}

Eigen::MatrixXd Network::embed(const Eigen::MatrixXd& input) const {
    return run(input, layers_.size() - 1, nullptr);
}

void Network::backward(const Cache& cache, const Eigen::MatrixXd& dlogits, Eigen::VectorXd& grad) const {
    if (grad.size() != params_.size()) grad = Eigen::VectorXd::Zero(params_.size());
    const std::size_t n_layers = layers_.size();
    std::vector<Eigen::MatrixXd> dacts(n_layers + 1);
    dacts[n_layers] = dlogits;
    const Eigen::Index batch = dlogits.rows();

    auto accumulate = [&](std::size_t at, Eigen::MatrixXd value) {
        if (dacts[at].size() == 0) {
            dacts[at] = std::move(value);
        } else {
            dacts[at] += value;
        }
    };

    for (std::size_t l = n_layers; l-- > 0;) {
        if (dacts[l + 1].size() == 0) continue;
        const Eigen::MatrixXd& dy = dacts[l + 1];
        const Eigen::MatrixXd& x = cache.activations[l];
        const bool need_dx = l > 0;
        std::visit(
            Overloaded{
                [&](const layers::Dense& d) {
                    ConstMap w(params_.data() + d.offset, d.out, d.in);
                    MutMap dw(grad.data() + d.offset, d.out, d.in);
                    Eigen::Map<Eigen::VectorXd> db(grad.data() + d.offset + Eigen::Index{d.out} * d.in, d.out);
                    dw.noalias() += dy.transpose() * x;
                    db += dy.colwise().sum().transpose();
                    if (need_dx) accumulate(l, dy * w);
                },
                [&](const layers::Relu&) {
                    if (need_dx) accumulate(l, dy.cwiseProduct((x.array() > 0.0).cast<double>().matrix()));
                },
                [&](const layers::Conv3x3& c) {
                    const int hw = c.height * c.width;
                    const Eigen::Index wn = Eigen::Index{c.out_channels} * c.in_channels * 9;
                    ConstMap w(params_.data() + c.offset, c.out_channels, c.in_channels * 9);
                    MutMap dw(grad.data() + c.offset, c.out_channels, c.in_channels * 9);
                    Eigen::Map<Eigen::VectorXd> db(grad.data() + c.offset + wn, c.out_channels);
                    Eigen::MatrixXd dx;
                    if (need_dx) dx = Eigen::MatrixXd::Zero(batch, x.cols());
                    for (Eigen::Index r = 0; r < batch; ++r) {
                        const Eigen::RowVectorXd xr = x.row(r);
                        const Eigen::RowVectorXd dyr = dy.row(r);
                        Eigen::Map<const Eigen::MatrixXd> dyt(dyr.data(), hw, c.out_channels);
                        const Eigen::MatrixXd cols = im2col(xr, c);
                        dw.noalias() += dyt.transpose() * cols.transpose();
                        db += dyt.colwise().sum().transpose();
                        if (need_dx) {
                            const Eigen::MatrixXd dcols = w.transpose() * dyt.transpose();
                            Eigen::RowVectorXd dxr = Eigen::RowVectorXd::Zero(x.cols());
                            col2im_add(dcols, c, dxr);
                            dx.row(r) = dxr;
                        }
                    }
                    if (need_dx) accumulate(l, std::move(dx));
                },
                [&](const layers::MaxPool2&) {
                    if (!need_dx) return;
                    const auto& argmax = cache.pool_argmax[l];
                    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(batch, x.cols());
                    const Eigen::Index osize = dy.cols();
                    for (Eigen::Index r = 0; r < batch; ++r)
                        for (Eigen::Index o = 0; o < osize; ++o)
                            dx(r, argmax[static_cast<std::size_t>(r * osize + o)]) += dy(r, o);
                    accumulate(l, std::move(dx));
                },
                [&](const layers::AddSkip& s) {
                    accumulate(static_cast<std::size_t>(s.source), dy);
                    if (need_dx) accumulate(l, dy);
                },
            },
            layers_[l]);
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd out = logits;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double m = out.row(r).maxCoeff();
        const double lse = m + std::log((out.row(r).array() - m).exp().sum());
        out.row(r).array() -= lse;
    }
    return out;
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits) {
    return log_softmax(logits).array().exp().matrix();
}

double cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels,
                     Eigen::MatrixXd* dlogits, double scale) {
    const Eigen::Index n = logits.rows();
    if (static_cast<std::size_t>(n) != labels.size()) throw InvalidArgument("label count mismatch");
    if (n == 0) throw InvalidArgument("cross_entropy on an empty batch");
    const Eigen::MatrixXd logp = log_softmax(logits);
    double total = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) total -= logp(r, labels[static_cast<std::size_t>(r)]);
    if (dlogits) {
        *dlogits = logp.array().exp().matrix();
        for (Eigen::Index r = 0; r < n; ++r) (*dlogits)(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
        *dlogits *= scale / static_cast<double>(n);
    }
    return total / static_cast<double>(n);
}

double kl_student_teacher(const Eigen::MatrixXd& student_logits, const Eigen::MatrixXd& teacher_log_probs,
                          Eigen::MatrixXd* dlogits, double scale) {
    const Eigen::Index n = student_logits.rows();
    if (n == 0) throw InvalidArgument("kl on an empty batch");
    const Eigen::MatrixXd logp = log_softmax(student_logits);
    const Eigen::ArrayXXd p = logp.array().exp();
    const Eigen::ArrayXXd diff = logp.array() - teacher_log_probs.array();
    const Eigen::VectorXd per_row = (p * diff).rowwise().sum().matrix();
    if (dlogits) {
        // d/dz_k sum_j p_j (log p_j - log q_j) = p_k (log p_k - log q_k - KL)
        Eigen::ArrayXXd g = diff;
        g.colwise() -= per_row.array();
        *dlogits = (p * g).matrix() * (scale / static_cast<double>(n));
    }
    return per_row.mean();
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

void Sgd::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr, const Eigen::VectorXd* mask) {
    if (velocity_.size() != params.size()) velocity_ = Eigen::VectorXd::Zero(params.size());
    Eigen::VectorXd d = grad + options_.weight_decay * params;
    if (mask) d = d.cwiseProduct(*mask);
    velocity_ = options_.momentum * velocity_ + d;
    params -= lr * velocity_;
}

double clip_grad_norm(Eigen::VectorXd& grad, double max_norm) {
    const double norm = grad.norm();
    if (max_norm > 0.0 && norm > max_norm) grad *= max_norm / norm;
    return norm;
}

}  // namespace rumkit
