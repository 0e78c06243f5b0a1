#include "slm/evalsuite/report.hpp"

#include <atomic>
#include <cstdio>
#include <optional>
#include <sstream>
#include <thread>

#include "slm/errors.hpp"
#include "slm/numcore/log.hpp"

namespace slm::evalsuite {

using nlohmann::json;

double unweighted_average(const std::map<std::string, LanguageScore>& per_language) {
    if (per_language.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& [_, s] : per_language) sum += s.wer;
    return sum / static_cast<double>(per_language.size());
}

EvalReport eval_corpus(std::span<const EvalItem> items, const Decoder& decode, std::size_t threads) {
    std::vector<std::optional<std::string>> hyps(items.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < items.size(); i = next++) {
            try {
                hyps[i] = decode(items[i]);
            } catch (const DataError& e) {
                log::warn("eval: skipping " + items[i].id + ": " + e.what());
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::max<std::size_t>(1, std::min(threads, items.size())); ++t)
            pool.emplace_back(work);
    }

    EvalReport report;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!hyps[i]) {
            report.skipped.push_back(items[i].id);
            continue;
        }
        Hypothesis h{items[i].id, items[i].language, items[i].reference, *hyps[i], wer(items[i].reference, *hyps[i])};
        auto& score = report.per_language[items[i].language];
        score.counts += h.counts;
        ++score.utterances;
        report.hypotheses.push_back(std::move(h));
    }
    for (auto& [_, s] : report.per_language) s.wer = s.counts.rate();
    report.average = unweighted_average(report.per_language);
    return report;
}

json EvalReport::to_json() const {
    json langs = json::object();
    for (const auto& [lang, s] : per_language)
        langs[lang] = {{"wer", s.wer},
                       {"utterances", s.utterances},
                       {"substitutions", s.counts.substitutions},
                       {"deletions", s.counts.deletions},
                       {"insertions", s.counts.insertions},
                       {"reference_words", s.counts.reference_words}};
    json hyp = json::array();
    for (const auto& h : hypotheses)
        hyp.push_back({{"id", h.id}, {"language", h.language}, {"reference", h.reference}, {"hypothesis", h.hypothesis},
                       {"errors", h.counts.errors()}});
    return {{"per_language", langs},
            {"average", average},
            {"skipped", skipped},
            {"decode_config_digest", decode_config_digest},
            {"hypotheses", hyp}};
}

std::string EvalReport::table(std::span<const std::string> columns, const std::string& row_label) const {
    std::ostringstream os;
    const int label_width = static_cast<int>(std::max<std::size_t>(row_label.size(), 5));
    char buf[32];
    os << std::string(static_cast<std::size_t>(label_width), ' ');
    for (const auto& c : columns) {
        std::snprintf(buf, sizeof buf, " %6s", c.c_str());
        os << buf;
    }
    os << "    Avg\n" << row_label << std::string(static_cast<std::size_t>(label_width) - row_label.size(), ' ');
    for (const auto& c : columns) {
        auto it = per_language.find(c);
        if (it == per_language.end()) std::snprintf(buf, sizeof buf, " %6s", "-");
        else std::snprintf(buf, sizeof buf, " %6.1f", 100.0 * it->second.wer);
        os << buf;
    }
    std::snprintf(buf, sizeof buf, " %6.1f\n", 100.0 * average);
    os << buf;
    return os.str();
}

} // namespace slm::evalsuite
