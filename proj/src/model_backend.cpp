#include "fairpairs/model_backend.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "fairpairs/stub_backend.hpp"
#include "fairpairs/text.hpp"

namespace fairpairs {

std::string Tokenizer::detokenize(std::span<const std::string> tokens) const {
    return text::join(std::vector<std::string>(tokens.begin(), tokens.end()), " ");
}

std::vector<std::string> WhitespaceTokenizer::tokenize(std::string_view text) const {
    return text::split_whitespace(text);
}

std::vector<Prediction> ClassifierBackend::predict(std::span<const std::string> texts,
                                                   const PredictOptions &options) const {
    const auto caps = capabilities();
    if (options.want_logits && !caps.provides_logits)
        throw CapabilityError("backend does not provide logits");
    if (options.want_attention && !caps.provides_attention)
        throw CapabilityError("backend does not provide attention");
    if (options.want_features && !caps.provides_features)
        throw CapabilityError("backend does not provide features");
    if (options.dropout_seed && !caps.dropout_controllable)
        throw CapabilityError("backend does not support controlled dropout");
    return do_predict(texts, options);
}

Prediction ClassifierBackend::predict_one(const std::string &text, const PredictOptions &options) const {
    return predict(std::span<const std::string>(&text, 1), options).front();
}

std::string MaskTemplate::text() const { return text::join(tokens, " "); }

MaskTemplate build_template(std::string source, std::span<const std::string> source_tokens,
                            const std::vector<bool> &masked, std::string mask_token) {
    if (masked.size() != source_tokens.size())
        throw PreconditionError("mask vector length differs from token count");
    MaskTemplate t;
    t.source = std::move(source);
    t.mask_token = std::move(mask_token);
    for (std::size_t k = 0; k < source_tokens.size(); ++k) {
        if (!masked[k]) {
            t.tokens.push_back(source_tokens[k]);
            continue;
        }
        if (!t.mask_spans.empty() && t.mask_spans.back().end == k) {
            t.mask_spans.back().end = k + 1;
        } else {
            t.mask_spans.push_back({k, k + 1});
            t.tokens.push_back(t.mask_token);
        }
    }
    t.valid = !t.mask_spans.empty();
    if (!t.valid) t.warning = "no masked positions";
    return t;
}

std::string mask_positions(std::span<const std::string> tokens, const std::vector<bool> &masked,
                           std::string_view mask_token) {
    std::string out;
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        if (k) out += ' ';
        out += masked[k] ? std::string(mask_token) : tokens[k];
    }
    return out;
}

std::string InfillBackend::prompt(const MaskTemplate &tmpl, std::string_view condition) {
    return fmt::format("{} {}", condition, tmpl.text());
}

std::vector<Completion> InfillBackend::fill(const MaskTemplate &tmpl, std::string_view condition,
                                            std::size_t beam_width) const {
    if (tmpl.mask_spans.empty()) throw PreconditionError("template has no mask spans");
    if (beam_width < 1) throw PreconditionError("beam width must be at least 1");
    auto out = do_fill(tmpl, condition, std::min(beam_width, max_beam()));
    if (out.size() > beam_width) out.resize(beam_width);
    // A generator may echo the condition prefix; strip it.
    const std::string prefix = std::string(condition) + " ";
    for (auto &c : out)
        if (c.text.rfind(prefix, 0) == 0) c.text.erase(0, prefix.size());
    return out;
}

std::unique_ptr<ModelBackend> make_backend(std::string_view name, const json &options) {
    if (name == "stub") {
        std::size_t buckets = options.value("feature_buckets", std::size_t{32});
        return std::make_unique<stub::StubBackend>(buckets);
    }
    throw PreconditionError(fmt::format("unknown backend '{}'", name));
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace fairpairs
