#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "slm/numcore/rng.hpp"

namespace slm::trainer {

/// Replaces each non-special token with `unk_id` with probability `fraction`.
/// Ids below `num_special` are never touched.
std::vector<int> mask_tokens(std::span<const int> ids, double fraction, int unk_id, Rng& rng, int num_special = 4);

/// Draws languages with probability proportional to hours^alpha.
class BalancedSampler {
public:
    /// Languages with zero hours are dropped with a warning.
    BalancedSampler(const std::map<std::string, double>& hours, double alpha);

    std::size_t draw(Rng& rng) const;
    const std::vector<std::string>& languages() const { return languages_; }
    const std::vector<double>& probabilities() const { return probs_; }
    double probability(const std::string& language) const;

private:
    std::vector<std::string> languages_;
    std::vector<double> probs_;
    std::vector<double> cumulative_;
};

} // namespace slm::trainer
