#include "mmfusion/report.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "mmfusion/errors.hpp"

namespace mmf {

namespace {

bool is_lower_alpha(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return c >= 'a' && c <= 'z'; });
}

}  // namespace

void MetadataRecord::validate() const {
    if (age && (*age < 18 || *age > 120)) {
        throw ValueError("metadata: age " + std::to_string(*age) + " outside [18, 120]");
    }
    if (exam_year && (*exam_year < 1990 || *exam_year > 2100)) {
        throw ValueError("metadata: exam_year " + std::to_string(*exam_year) + " outside [1990, 2100]");
    }
    if (breast_density && (*breast_density < 'A' || *breast_density > 'D')) {
        throw ValueError(std::string("metadata: breast_density '") + *breast_density +
                         "' outside {A,B,C,D}");
    }
    if (birads && (*birads < 0 || *birads > 6)) {
        throw ValueError("metadata: birads " + std::to_string(*birads) + " outside [0, 6]");
    }
    auto check_word = [](const char* field, const std::optional<std::string>& v) {
        if (v && !is_lower_alpha(*v)) {
            throw ValueError(std::string("metadata: ") + field + " '" + *v +
                             "' must be a single lowercase word");
        }
    };
    check_word("nationality", nationality);
    check_word("device_manufacturer", device_manufacturer);
    check_word("device_model", device_model);
    check_word("institution", institution);
}

const CategoricalDomains& CategoricalDomains::defaults() {
    static const CategoricalDomains d{
        {"danish", "german", "swedish", "norwegian", "dutch", "french"},
        {"hologic", "siemens", "ge", "philips", "fujifilm"},
        {"selenia", "mammomat", "senographe", "amulet", "clearview"},
        {"copenhagen", "berlin", "stockholm", "oslo", "amsterdam"},
    };
    return d;
}

std::string default_report_template() {
    return "a patient of {age} age .\n"
           "nationality {nationality} .\n"
           "exam from {exam_year} at {institution} on a {device_manufacturer} {device_model} device .\n"
           "breast density category {breast_density} .\n"
           "birads category {birads} .\n";
}

std::string render_report(const MetadataRecord& record, const std::string& template_text) {
    record.validate();

    auto slot_value = [&record](const std::string& name) -> std::string {
        if (name == "age") return record.age ? std::to_string(*record.age) : "unknown";
        if (name == "nationality") return record.nationality ? *record.nationality : "unknown";
        if (name == "device_manufacturer")
            return record.device_manufacturer ? *record.device_manufacturer : "unknown";
        if (name == "device_model") return record.device_model ? *record.device_model : "unknown";
        if (name == "institution") return record.institution ? *record.institution : "unknown";
        if (name == "exam_year") return record.exam_year ? std::to_string(*record.exam_year) : "unknown";
        if (name == "breast_density")
            return record.breast_density ? std::string(1, static_cast<char>(std::tolower(*record.breast_density)))
                                         : "unknown";
        if (name == "birads") return record.birads ? std::to_string(*record.birads) : "unknown";
        throw ValueError("template: unknown slot {" + name + "}");
    };

    std::string out;
    out.reserve(template_text.size() + 32);
    bool first_word = true;
    std::string pending;
    for (std::size_t i = 0; i < template_text.size(); ++i) {
        char c = template_text[i];
        if (c == '{') {
            std::size_t close = template_text.find('}', i);
            if (close == std::string::npos) throw ValueError("template: unterminated slot");
            pending += slot_value(template_text.substr(i + 1, close - i - 1));
            i = close;
        } else if (c == '\n' || c == ' ') {
            if (!pending.empty()) {
                if (!first_word) out += ' ';
                out += pending;
                pending.clear();
                first_word = false;
            }
        } else {
            pending += c;
        }
    }
    if (!pending.empty()) {
        if (!first_word) out += ' ';
        out += pending;
    }
    return out;
}

std::vector<std::string> split_report_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::string run;
    auto flush = [&]() {
        if (!run.empty()) {
            tokens.push_back(run);
            run.clear();
        }
    };
    for (unsigned char c : text) {
        c = static_cast<unsigned char>(std::tolower(c));
        if (std::isspace(c)) {
            flush();
        } else if (std::isdigit(c)) {
            // Digits always stand alone so any number stays in-vocabulary.
            flush();
            tokens.push_back(std::string(1, static_cast<char>(c)));
        } else if (std::isalpha(c)) {
            run += static_cast<char>(c);
        } else {
            // Punctuation is its own token.
            flush();
            tokens.push_back(std::string(1, static_cast<char>(c)));
        }
    }
    flush();
    return tokens;
}

Vocabulary Vocabulary::build(const std::string& template_text, const CategoricalDomains& domains) {
    std::map<std::string, int> collected;
    auto put = [&collected](const std::string& tok) {
        if (!tok.empty()) collected.emplace(tok, 0);
    };

    // Template lexicon: every literal word in the skeletons. Slot markers
    // are dropped; their renderable values are covered below.
    std::string stripped = template_text;
    for (std::size_t open = stripped.find('{'); open != std::string::npos; open = stripped.find('{')) {
        std::size_t close = stripped.find('}', open);
        if (close == std::string::npos) throw ValueError("template: unterminated slot");
        stripped.erase(open, close - open + 1);
    }
    for (const auto& tok : split_report_tokens(stripped)) put(tok);

    put("unknown");
    for (char d = '0'; d <= '9'; ++d) put(std::string(1, d));
    for (char d = 'a'; d <= 'd'; ++d) put(std::string(1, d));
    for (const auto& group :
         {domains.nationalities, domains.manufacturers, domains.models, domains.institutions}) {
        for (const auto& v : group) {
            for (const auto& tok : split_report_tokens(v)) put(tok);
        }
    }

    Vocabulary vocab;
    vocab.id_to_token_ = {"<pad>", "<unk>"};
    int next = 2;
    for (auto& [tok, id] : collected) {  // std::map iterates in sorted order
        id = next++;
        vocab.id_to_token_.push_back(tok);
    }
    vocab.token_to_id_ = std::move(collected);
    return vocab;
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
        throw ValueError("vocabulary: id " + std::to_string(id) + " out of range");
    }
    return id_to_token_[static_cast<std::size_t>(id)];
}

EncodedText encode_text(const std::string& text, const Vocabulary& vocab, std::size_t max_len) {
    if (max_len < 1) throw ValueError("encode_text: max_len must be >= 1");
    const auto tokens = split_report_tokens(text);
    EncodedText out;
    out.ids.assign(max_len, Vocabulary::kPad);
    out.length = std::min(tokens.size(), max_len);
    for (std::size_t i = 0; i < out.length; ++i) out.ids[i] = vocab.id(tokens[i]);
    return out;
}

}  // namespace mmf
