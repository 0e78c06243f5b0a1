#include "slm/trainer/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "slm/errors.hpp"
#include "slm/numcore/log.hpp"

namespace slm::trainer {

std::vector<int> mask_tokens(std::span<const int> ids, double fraction, int unk_id, Rng& rng, int num_special) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw InputError("mask fraction must be in [0, 1]");
    std::vector<int> out(ids.begin(), ids.end());
    if (fraction == 0.0) return out;
    for (int& id : out)
        if (id >= num_special && rng.bernoulli(fraction)) id = unk_id;
    return out;
}

BalancedSampler::BalancedSampler(const std::map<std::string, double>& hours, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("sampling alpha must be in [0, 1]");
    std::vector<double> weights;
    for (const auto& [lang, h] : hours) {
        if (!(h > 0.0)) {
            log::warn("sampler: language '" + lang + "' has no data and is excluded");
            continue;
        }
        languages_.push_back(lang);
        weights.push_back(std::pow(h, alpha));
    }
    if (languages_.empty()) throw DataError("sampler: no language has any data");
    double total = 0;
    for (double w : weights) total += w;
    double acc = 0;
    for (double w : weights) {
        probs_.push_back(w / total);
        acc += w / total;
        cumulative_.push_back(acc);
    }
    cumulative_.back() = 1.0;
}

std::size_t BalancedSampler::draw(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
}

double BalancedSampler::probability(const std::string& language) const {
    for (std::size_t i = 0; i < languages_.size(); ++i)
        if (languages_[i] == language) return probs_[i];
    return 0.0;
}

} // namespace slm::trainer
