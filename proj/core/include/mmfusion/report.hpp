#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mmf {

// One exam's tabular covariates. Every field is optional; absent means the
// value was missing in the source and renders as "unknown" in the report.
struct MetadataRecord {
    std::optional<int> age;                        // [18, 120]
    std::optional<std::string> nationality;
    std::optional<std::string> device_manufacturer;
    std::optional<std::string> device_model;
    std::optional<std::string> institution;
    std::optional<int> exam_year;                  // [1990, 2100]
    std::optional<char> breast_density;            // 'A'..'D'
    std::optional<int> birads;                     // 0..6

    // Throws ValueError naming the offending field when a value is outside
    // its documented domain.
    void validate() const;
};

// Closed categorical domains used both by the report renderer (vocabulary
// closure) and the synthetic metadata generator.
struct CategoricalDomains {
    std::vector<std::string> nationalities;
    std::vector<std::string> manufacturers;
    std::vector<std::string> models;
    std::vector<std::string> institutions;

    static const CategoricalDomains& defaults();
};

// The normative sentence skeletons, one per line, with {field} slots. A
// missing field substitutes the literal word "unknown", so a record with a
// missing age renders "a patient of unknown age".
std::string default_report_template();

// Renders the record through the template. Pure function of its inputs;
// numbers render as decimal words and are split into digit tokens at
// encoding time.
std::string render_report(const MetadataRecord& record,
                          const std::string& template_text = default_report_template());

// Token ids over a closed vocabulary. Ids 0 and 1 are reserved.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    // Deterministic: tokens collected from the template lexicon, the
    // categorical domains, density letters, digits and "unknown", then
    // assigned ids in sorted order starting at 2.
    static Vocabulary build(const std::string& template_text = default_report_template(),
                            const CategoricalDomains& domains = CategoricalDomains::defaults());

    int id(const std::string& token) const;       // kUnk when absent
    const std::string& token(int id) const;
    std::size_t size() const { return id_to_token_.size(); }
    bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

private:
    std::map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

struct EncodedText {
    std::vector<int> ids;   // exactly max_len entries, PAD-padded or truncated
    std::size_t length;     // number of real (non-PAD) tokens, <= max_len
};

// Lowercases, splits on whitespace/punctuation, splits numbers into digit
// tokens, maps through the vocabulary (unknown words -> UNK), pads/truncates
// to max_len.
EncodedText encode_text(const std::string& text, const Vocabulary& vocab, std::size_t max_len);

// Tokenization helper shared by the vocabulary builder and the encoder.
std::vector<std::string> split_report_tokens(const std::string& text);

}  // namespace mmf
