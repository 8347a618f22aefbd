#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mmfusion/data_synth.hpp"
#include "mmfusion/report.hpp"

using namespace mmf;

namespace {

MetadataRecord full_record() {
    MetadataRecord r;
    r.age = 54;
    r.nationality = "danish";
    r.device_manufacturer = "hologic";
    r.device_model = "selenia";
    r.institution = "copenhagen";
    r.exam_year = 2019;
    r.breast_density = 'C';
    r.birads = 4;
    return r;
}

}  // namespace

TEST_CASE("render_report substitutes every slot") {
    const std::string report = render_report(full_record());
    CHECK(report ==
          "a patient of 54 age . nationality danish . exam from 2019 at copenhagen on a hologic "
          "selenia device . breast density category c . birads category 4 .");
}

TEST_CASE("missing age renders 'patient of unknown age'") {
    MetadataRecord r = full_record();
    r.age.reset();
    const std::string report = render_report(r);
    CHECK(report.find("patient of unknown age") != std::string::npos);
}

TEST_CASE("all-missing record renders unknown everywhere and stays in-vocabulary") {
    MetadataRecord r;
    const std::string report = render_report(r);
    CHECK(report.find("unknown") != std::string::npos);
    const Vocabulary vocab = Vocabulary::build();
    for (const auto& tok : split_report_tokens(report)) {
        CHECK(vocab.id(tok) != Vocabulary::kUnk);
    }
}

TEST_CASE("report length stays within 64 whitespace tokens") {
    CHECK(split_report_tokens(render_report(full_record())).size() <= 64);
    CHECK(split_report_tokens(render_report(MetadataRecord{})).size() <= 64);
}

TEST_CASE("record validation names the offending field") {
    MetadataRecord r = full_record();
    r.age = 200;
    CHECK_THROWS_WITH_AS(render_report(r), doctest::Contains("age"), ValueError);
    r = full_record();
    r.breast_density = 'E';
    CHECK_THROWS_WITH_AS(render_report(r), doctest::Contains("density"), ValueError);
    r = full_record();
    r.birads = 9;
    CHECK_THROWS_WITH_AS(render_report(r), doctest::Contains("birads"), ValueError);
    r = full_record();
    r.exam_year = 1900;
    CHECK_THROWS_WITH_AS(render_report(r), doctest::Contains("exam_year"), ValueError);
}

TEST_CASE("vocabulary build is deterministic") {
    const Vocabulary a = Vocabulary::build();
    const Vocabulary b = Vocabulary::build();
    CHECK(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.token(static_cast<int>(i)) == b.token(static_cast<int>(i)));
    CHECK(a.id("<pad>") == Vocabulary::kUnk);  // literal "<pad>" is not a token
    CHECK(a.token(0) == "<pad>");
    CHECK(a.token(1) == "<unk>");
}

TEST_CASE("empty domains leave reserved plus template lexicon") {
    CategoricalDomains empty;
    const Vocabulary v = Vocabulary::build(default_report_template(), empty);
    CHECK(v.size() > 2);
    CHECK(v.contains("patient"));
    CHECK(v.contains("unknown"));
    CHECK(v.contains("7"));
    CHECK_FALSE(v.contains("danish"));
}

TEST_CASE("encode_text pads, truncates and reports true length") {
    const Vocabulary vocab = Vocabulary::build();
    EncodedText e = encode_text("unknown age", vocab, 4);
    CHECK(e.ids.size() == 4);
    CHECK(e.length == 2);
    CHECK(e.ids[0] == vocab.id("unknown"));
    CHECK(e.ids[1] == vocab.id("age"));
    CHECK(e.ids[2] == Vocabulary::kPad);
    CHECK(e.ids[3] == Vocabulary::kPad);

    EncodedText t = encode_text("a b c d e f", vocab, 3);
    CHECK(t.ids.size() == 3);
    CHECK(t.length == 3);

    EncodedText unk = encode_text("zebra", vocab, 2);
    CHECK(unk.ids[0] == Vocabulary::kUnk);
}

TEST_CASE("digits always encode per character") {
    const Vocabulary vocab = Vocabulary::build();
    EncodedText e = encode_text("2019", vocab, 8);
    CHECK(e.length == 4);
    CHECK(vocab.token(e.ids[0]) == "2");
    CHECK(vocab.token(e.ids[3]) == "9");
}

// Closure: encode(render(r)) emits zero UNK over fuzzed records, including
// missing fields.
TEST_CASE("encode-render closure over 10k fuzzed records") {
    const Vocabulary vocab = Vocabulary::build();
    SynthConfig cfg;
    std::size_t total_unk = 0;
    for (std::size_t i = 0; i < 10000; ++i) {
        SampleLatents latents = draw_latents(cfg, Task::malignancy, 97, i);
        EncodedText e = encode_text(render_report(latents.record), vocab, 64);
        for (std::size_t k = 0; k < e.length; ++k) {
            if (e.ids[k] == Vocabulary::kUnk) ++total_unk;
        }
    }
    CHECK(total_unk == 0);
}

TEST_CASE("missing-field monotonicity: only that slot's tokens change") {
    const Vocabulary vocab = Vocabulary::build();
    MetadataRecord base = full_record();
    const auto base_tokens = split_report_tokens(render_report(base));

    MetadataRecord no_nat = base;
    no_nat.nationality.reset();
    const auto tokens = split_report_tokens(render_report(no_nat));
    REQUIRE(tokens.size() == base_tokens.size());
    std::size_t diffs = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] != base_tokens[i]) {
            ++diffs;
            CHECK(tokens[i] == "unknown");
            CHECK(base_tokens[i] == "danish");
        }
    }
    CHECK(diffs == 1);
}

TEST_CASE("repository template file matches the built-in template") {
    std::ifstream in(std::string(TEST_SOURCE_DIR) + "/../core/data/report_template.txt");
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() == default_report_template());
}
