#include "cdx/training.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cdx {

namespace {

void check_target(const Tensor& logits, const Tensor& target, const char* who) {
    if (logits.shape() != target.shape())
        throw ShapeError(std::string(who) + ": logits " + shape_str(logits.shape()) + " vs target " +
                         shape_str(target.shape()));
    for (std::size_t i = 0; i < target.numel(); ++i) {
        const double y = target.data()[i];
        if (y != 0.0 && y != 1.0)
            throw std::invalid_argument(std::string(who) + ": target value " + std::to_string(y) + " at index " +
                                        std::to_string(i) + " is not 0 or 1");
    }
}

double ratio(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

// ce * BCE + dice * Dice as one node. Reductions run in long double and the
// result is rounded once, which keeps finite-difference probes of the loss
// close to a single ulp of noise.
Tensor fused_loss(const Tensor& logits, const Tensor& target, double wce, double wdice, double eps) {
    const auto& z = logits.node()->value;
    const auto& y = target.node()->value;
    const std::size_t n = z.size();
    std::vector<double> p(n);
    long double ce = 0.0L, spy = 0.0L, sp = 0.0L, sy = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        ce += static_cast<long double>(std::max(z[i], 0.0)) - static_cast<long double>(z[i]) * y[i] +
              std::log1p(std::exp(-std::abs(z[i])));
        p[i] = 1.0 / (1.0 + std::exp(-z[i]));
        spy += static_cast<long double>(p[i]) * y[i];
        sp += p[i];
        sy += y[i];
    }
    const long double num = 2.0L * spy + eps, den = sp + sy + eps;
    long double value = 0.0L;
    if (wce != 0.0) value += wce * (ce / static_cast<long double>(n));
    if (wdice != 0.0) value += wdice * (1.0L - num / den);
    auto nz = logits.node_ptr();
    auto ny = target.node_ptr();
    return make_result(
        {1}, {static_cast<double>(value)}, {logits},
        [nz, ny, p = std::move(p), wce, wdice, num = static_cast<double>(num), den = static_cast<double>(den)](Node& self) {
            const double g = self.grad[0];
            const double gce = g * wce / static_cast<double>(p.size());
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double yi = ny->value[i];
                const double dp = -(2.0 * yi * den - num) / (den * den);
                nz->grad[i] += gce * (p[i] - yi) + g * wdice * dp * p[i] * (1.0 - p[i]);
            }
        },
        "loss");
}

}  // namespace

Tensor bce_loss(const Tensor& logits, const Tensor& target) {
    check_target(logits, target, "bce_loss");
    return fused_loss(logits, target, 1.0, 0.0, 1.0);
}

Tensor dice_loss(const Tensor& logits, const Tensor& target, double eps) {
    check_target(logits, target, "dice_loss");
    if (!(eps > 0.0)) throw std::invalid_argument("dice_loss: epsilon must be > 0, got " + std::to_string(eps));
    return fused_loss(logits, target, 0.0, 1.0, eps);
}

Tensor total_loss(const Tensor& logits, const Tensor& target, const LossWeights& w) {
    if (w.ce < 0.0 || w.dice < 0.0)
        throw std::invalid_argument("total_loss: negative loss weight (ce " + std::to_string(w.ce) + ", dice " +
                                    std::to_string(w.dice) + ")");
    check_target(logits, target, "total_loss");
    return fused_loss(logits, target, w.ce, w.dice, 1.0);
}

Adam::Adam(const ParamStore& store, const AdamConfig& cfg) : store_(&store), cfg_(cfg) {
    for (const auto& p : store.params()) {
        m_.emplace_back(p.value.numel(), 0.0);
        v_.emplace_back(p.value.numel(), 0.0);
    }
}

void Adam::step() {
    const auto& params = store_->params();
    if (params.size() != m_.size()) throw std::logic_error("adam: parameter store changed after construction");
    for (const auto& p : params)
        if (!p.value.has_grad()) throw std::invalid_argument("adam: parameter '" + p.name + "' has no gradient");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor w = params[k].value;
        auto data = w.data_mut();
        auto grad = w.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            data[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
    }
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
}

std::vector<std::uint8_t> binarize_logits(const Tensor& logits) {
    std::vector<std::uint8_t> out(logits.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits.data()[i] > 0.0;
    return out;
}

std::vector<std::uint8_t> mask_of(const Tensor& target) {
    std::vector<std::uint8_t> out(target.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = target.data()[i] > 0.5;
    return out;
}

ConfusionCounts update_confusion(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target,
                                 ConfusionCounts acc) {
    if (pred.size() != target.size())
        throw ShapeError("update_confusion: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(target.size()) + " targets");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i])
            ++(target[i] ? acc.tp : acc.fp);
        else
            ++(target[i] ? acc.fn : acc.tn);
    }
    return acc;
}

Metrics metrics(const ConfusionCounts& c) {
    const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
    const auto fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
    Metrics m;
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    // Same value as 2 P R / (P + R), without the intermediate roundoff.
    m.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);
    m.iou = ratio(tp, tp + fp + fn);
    m.oa = ratio(tp + tn, tp + fp + fn + tn);
    return m;
}

}  // namespace cdx
