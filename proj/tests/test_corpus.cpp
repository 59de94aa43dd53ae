#include <gtest/gtest.h>

#include "mn/corpus.hpp"
#include "test_util.hpp"

namespace {

mn::ResponseRecord rec(std::size_t idx, mn::Variant variant = mn::Variant::baseline, std::string model = "m1") {
    mn::ResponseRecord r;
    r.prompt_id = "p001";
    r.variant = variant;
    if (variant != mn::Variant::baseline) r.view_id = "t001";
    r.model = std::move(model);
    r.sample_index = idx;
    r.text = "answer " + std::to_string(idx) + " \xE2\x80\x94 \"quoted\"\n";
    r.created_at = "2026-01-01T00:00:00Z";
    return r;
}

} // namespace

TEST(Prompts, JsonlAndPlainText) {
    testutil::TempDir dir;
    testutil::write_file(dir / "a.jsonl", "{\"id\":\"happy\",\"text\":\"What is joy?\",\"subject\":\"life\"}\n\n"
                                          "{\"text\":\"Second prompt\"}\n");
    auto a = mn::load_prompts(dir / "a.jsonl");
    ASSERT_EQ(a.size(), 2u);
    EXPECT_EQ(a[0].id, "happy");
    EXPECT_EQ(*a[0].subject, "life");
    EXPECT_EQ(a[1].id, "p002");
    testutil::write_file(dir / "b.txt", "first\nsecond\nthird\n");
    auto b = mn::load_prompts(dir / "b.txt");
    ASSERT_EQ(b.size(), 3u);
    EXPECT_EQ(b[2].id, "p003");
    EXPECT_EQ(b[2].text, "third");
}

TEST(Prompts, BundledSampleHasTenPrompts) {
    auto prompts = mn::load_prompts(std::filesystem::path(MN_SOURCE_DIR) / "data" / "prompts.jsonl");
    EXPECT_EQ(prompts.size(), 10u);
    for (const auto &p : prompts) EXPECT_TRUE(p.subject.has_value());
}

TEST(Prompts, Errors) {
    testutil::TempDir dir;
    testutil::write_file(dir / "empty.txt", "\n  \n");
    EXPECT_THROW(mn::load_prompts(dir / "empty.txt"), mn::NoPrompts);
    testutil::write_file(dir / "dup.jsonl", "{\"id\":\"x\",\"text\":\"a\"}\n{\"id\":\"x\",\"text\":\"b\"}\n");
    EXPECT_THROW(mn::load_prompts(dir / "dup.jsonl"), mn::DuplicateId);
    testutil::write_file(dir / "bad.jsonl", "{\"id\":\"x\",\"text\":\"a\"}\n{\"id\":\"y\",\n");
    try {
        mn::load_prompts(dir / "bad.jsonl");
        FAIL();
    } catch (const mn::ParseError &e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(mn::load_prompts(dir / "missing.jsonl"), mn::StorageError);
}

TEST(Records, AppendIsIdempotent) {
    testutil::TempDir dir;
    std::vector<mn::ResponseRecord> recs;
    for (std::size_t i = 0; i < 100; ++i) recs.push_back(rec(i));
    EXPECT_EQ(mn::append_records(dir / "r.jsonl", recs), 100u);
    EXPECT_EQ(mn::append_records(dir / "r.jsonl", recs), 0u);
    EXPECT_EQ(mn::read_records(dir / "r.jsonl").size(), 100u);
    // Same index under another variant or model is a different record.
    std::vector<mn::ResponseRecord> more = {rec(0, mn::Variant::text_view), rec(0, mn::Variant::baseline, "m2")};
    EXPECT_EQ(mn::append_records(dir / "r.jsonl", more), 2u);
}

TEST(Records, InvariantViolations) {
    testutil::TempDir dir;
    auto bad = rec(0, mn::Variant::text_view);
    bad.view_id.reset();
    std::vector<mn::ResponseRecord> one = {bad};
    EXPECT_THROW(mn::append_records(dir / "r.jsonl", one), mn::InvalidRecord);
    auto base = rec(1);
    base.view_id = "t001";
    one = {base};
    EXPECT_THROW(mn::append_records(dir / "r.jsonl", one), mn::InvalidRecord);
    // Nothing is written when any record in the batch is invalid.
    std::vector<mn::ResponseRecord> mixed = {rec(2), bad};
    EXPECT_THROW(mn::append_records(dir / "r.jsonl", mixed), mn::InvalidRecord);
    EXPECT_FALSE(std::filesystem::exists(dir / "r.jsonl"));
}

TEST(Records, RoundTripFieldForField) {
    testutil::TempDir dir;
    std::vector<mn::ResponseRecord> recs = {rec(0), rec(1, mn::Variant::image_view)};
    recs[1].view_id = "i001";
    recs[1].decoding = {0.7, 0.5, 64};
    mn::append_records(dir / "r.jsonl", recs);
    auto back = mn::read_records(dir / "r.jsonl");
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(mn::json(back[i]), mn::json(recs[i]));
        EXPECT_EQ(back[i].text, recs[i].text);
        EXPECT_EQ(back[i].view_id, recs[i].view_id);
        EXPECT_EQ(back[i].decoding, recs[i].decoding);
    }
}

TEST(Records, FilterAndPrefix) {
    testutil::TempDir dir;
    std::vector<mn::ResponseRecord> recs;
    // Stored out of order; reads come back by sample_index.
    for (std::size_t i = 0; i < 2000; ++i) recs.push_back(rec((i * 7919) % 2000));
    mn::append_records(dir / "r.jsonl", recs);
    auto first = mn::read_records(dir / "r.jsonl", {.limit = 100});
    ASSERT_EQ(first.size(), 100u);
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(first[i].sample_index, i);
    auto more = mn::read_records(dir / "r.jsonl", {.limit = 250});
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(mn::json(first[i]), mn::json(more[i]));
    EXPECT_TRUE(mn::read_records(dir / "r.jsonl", {.model = "x"}).empty());
    EXPECT_EQ(mn::read_records(dir / "r.jsonl", {.variant = mn::Variant::baseline}).size(), 2000u);
}

TEST(Records, TruncatedLineReportsLineNumber) {
    testutil::TempDir dir;
    std::vector<mn::ResponseRecord> recs = {rec(0), rec(1)};
    mn::append_records(dir / "r.jsonl", recs);
    std::ofstream(dir / "r.jsonl", std::ios::app) << "{\"prompt_id\":\"p001\",\"vari";
    try {
        mn::read_records(dir / "r.jsonl");
        FAIL();
    } catch (const mn::ParseError &e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(Views, AppendAndFilter) {
    testutil::TempDir dir;
    mn::ViewRecord t{"t001", "p001", mn::ViewKind::text, "a view", std::nullopt, std::nullopt};
    mn::ViewRecord i{"i001", "p001", mn::ViewKind::image, "an image", "x.jpg", "raw"};
    std::vector<mn::ViewRecord> v = {t, i};
    EXPECT_EQ(mn::append_views(dir / "v.jsonl", v), 2u);
    EXPECT_EQ(mn::append_views(dir / "v.jsonl", v), 0u);
    EXPECT_EQ(mn::read_views(dir / "v.jsonl", "p001", mn::ViewKind::image).size(), 1u);
    auto bad = i;
    bad.source.reset();
    std::vector<mn::ViewRecord> b = {bad};
    EXPECT_THROW(mn::append_views(dir / "v.jsonl", b), mn::InvalidRecord);
}

TEST(Manifest, DefaultsAndValidation) {
    testutil::TempDir dir;
    testutil::write_file(dir / "m.json", R"({"prompts":"prompts.jsonl","models":["a"]})");
    auto m = mn::load_manifest(dir / "m.json");
    EXPECT_EQ(m.sample_sizes, (std::vector<std::size_t>{100, 250, 500, 1000, 1500, 2000}));
    EXPECT_EQ(m.views_per_prompt, 50u);
    EXPECT_EQ(m.decoding, (mn::DecodingParams{0.9, 0.95, 125}));
    EXPECT_EQ(m.prompts, dir / "prompts.jsonl");
    testutil::write_file(dir / "bad.json", R"({"prompts":"p","models":["a"],"sample_sizes":[0]})");
    EXPECT_THROW(mn::load_manifest(dir / "bad.json"), mn::InvalidArg);
    testutil::write_file(dir / "bad2.json", R"({"prompts":"p","models":["a"],"views_per_prompt":0})");
    EXPECT_THROW(mn::load_manifest(dir / "bad2.json"), mn::InvalidArg);
}
