#include "cdx/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace cdx {

Tensor stack_samples(const std::vector<BiTemporalSample>& samples, const std::vector<std::size_t>& idx, int which) {
    if (idx.empty()) throw std::invalid_argument("stack_samples: empty selection");
    auto pick = [&](std::size_t i) -> const Tensor& {
        const auto& s = samples.at(i);
        return which == 0 ? s.img1 : which == 1 ? s.img2 : s.mask;
    };
    const Shape one = pick(idx[0]).shape();
    std::vector<double> v;
    v.reserve(idx.size() * numel_of(one));
    for (auto i : idx) {
        const auto& t = pick(i);
        if (t.shape() != one)
            throw ShapeError("stack_samples: sample " + samples[i].id + " has shape " + shape_str(t.shape()) +
                             ", expected " + shape_str(one));
        v.insert(v.end(), t.data().begin(), t.data().end());
    }
    Shape s = one;
    s[0] = idx.size();
    return Tensor::from(std::move(s), std::move(v));
}

std::vector<EpochLog> train(const ChangeDetector& model, ParamStore& store, const std::vector<BiTemporalSample>& samples,
                            const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch) {
    if (samples.empty()) throw std::invalid_argument("train: no samples");
    if (cfg.batch == 0) throw std::invalid_argument("train: batch size must be positive");
    Adam opt(store, cfg.adam);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<EpochLog> logs;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        // Fisher-Yates with the portable integer draw.
        for (std::size_t i = order.size(); i-- > 1;)
            std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
        EpochLog row;
        row.epoch = e + 1;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
            std::vector<std::size_t> idx(order.begin() + static_cast<long>(b),
                                         order.begin() + static_cast<long>(std::min(b + cfg.batch, order.size())));
            const Tensor a = stack_samples(samples, idx, 0), c = stack_samples(samples, idx, 1),
                         y = stack_samples(samples, idx, 2);
            store.zero_grad();
            const Tensor z = model.forward(a, c);
            const Tensor loss = total_loss(z, y, cfg.loss);
            backward(loss);
            opt.step();
            row.loss += loss.item();
            row.counts = update_confusion(binarize_logits(z), mask_of(y), row.counts);
            ++batches;
        }
        row.loss /= static_cast<double>(batches);
        row.metrics = metrics(row.counts);
        logs.push_back(row);
        if (on_epoch) on_epoch(row);
    }
    return logs;
}

EvalResult evaluate(const ChangeDetector& model, const std::vector<BiTemporalSample>& samples, const LossWeights& loss,
                    std::size_t batch) {
    if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
    if (batch == 0) throw std::invalid_argument("evaluate: batch size must be positive");
    NoGradGuard no_grad;
    EvalResult r;
    double weighted = 0.0;
    for (std::size_t b = 0; b < samples.size(); b += batch) {
        std::vector<std::size_t> idx;
        for (std::size_t i = b; i < std::min(b + batch, samples.size()); ++i) idx.push_back(i);
        const Tensor y = stack_samples(samples, idx, 2);
        const Tensor z = model.forward(stack_samples(samples, idx, 0), stack_samples(samples, idx, 1));
        weighted += total_loss(z, y, loss).item() * static_cast<double>(idx.size());
        r.counts = update_confusion(binarize_logits(z), mask_of(y), r.counts);
    }
    r.loss = weighted / static_cast<double>(samples.size());
    r.metrics = metrics(r.counts);
    return r;
}

}  // namespace cdx
