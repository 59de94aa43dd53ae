#include <gtest/gtest.h>

#include "mn/mock_provider.hpp"
#include "mn/views.hpp"
#include "test_util.hpp"

namespace {

mn::PromptSpec happiness() { return {"p001", "What is true happiness in life?", std::nullopt}; }

std::vector<std::string> contents(const std::vector<mn::ViewRecord> &v) {
    std::vector<std::string> out;
    for (const auto &x : v) out.push_back(x.content);
    return out;
}

} // namespace

TEST(NumberedList, Formats) {
    auto items = mn::parse_numbered_list("Here you go:\n1. First view\n2) Second view\r\n 3 - Third\n(4) **Bold**\n\nnot numbered\n");
    EXPECT_EQ(items, (std::vector<std::string>{"First view", "Second view", "Third", "Bold"}));
    EXPECT_TRUE(mn::parse_numbered_list("Just some prose about the topic.").empty());
}

TEST(NumberedList, NormalizedKey) {
    EXPECT_EQ(mn::normalize_view_text("  Happiness   AS\tConnection "), "happiness as connection");
}

TEST(TextViews, MockFifty) {
    mn::MockProvider p;
    auto v = mn::generate_text_views(p, happiness(), 50, "m");
    ASSERT_EQ(v.size(), 50u);
    std::set<std::string> keys;
    for (std::size_t i = 0; i < v.size(); ++i) {
        EXPECT_EQ(v[i].view_id, mn::view_id('t', i + 1));
        EXPECT_EQ(v[i].prompt_id, "p001");
        EXPECT_EQ(v[i].kind, mn::ViewKind::text);
        keys.insert(mn::normalize_view_text(v[i].content));
    }
    EXPECT_EQ(keys.size(), 50u);
    EXPECT_EQ(v.front().view_id, "t001");
    EXPECT_EQ(v.back().view_id, "t050");
}

TEST(TextViews, DedupAndTopUp) {
    mn::ScriptedProvider p({std::string("1. A\n2. a\n3. B"), std::string("1. C")});
    auto v = mn::generate_text_views(p, happiness(), 3, "m");
    EXPECT_EQ(contents(v), (std::vector<std::string>{"A", "B", "C"}));
    auto reqs = p.requests();
    ASSERT_EQ(reqs.size(), 2u);
    EXPECT_NE(reqs[0].messages.back().content.find("Generate 3 distinct perspectives"), std::string::npos);
    EXPECT_NE(reqs[1].messages.back().content.find("Generate 1 distinct perspectives"), std::string::npos);
    EXPECT_NE(reqs[1].messages.back().content.find("Avoid repeating"), std::string::npos);
}

TEST(TextViews, ProseShortfall) {
    mn::ScriptedProvider p({std::string("prose"), std::string("more prose"), std::string("still prose")});
    try {
        mn::generate_text_views(p, happiness(), 2, "m");
        FAIL() << "expected ViewShortfall";
    } catch (const mn::ViewShortfall &e) {
        EXPECT_EQ(e.got(), 0u);
        EXPECT_EQ(e.want(), 2u);
    }
    EXPECT_EQ(p.requests().size(), 3u);
    EXPECT_THROW(mn::generate_text_views(p, happiness(), 0, "m"), mn::InvalidArg);
}

TEST(TextViews, DeterministicPerSeed) {
    mn::MockProvider a, b;
    EXPECT_EQ(contents(mn::generate_text_views(a, happiness(), 5, "m", mn::TemplateSet::defaults(), 7)),
              contents(mn::generate_text_views(b, happiness(), 5, "m", mn::TemplateSet::defaults(), 7)));
}

TEST(ImageViews, DescribeRewriteChain) {
    testutil::TempDir dir;
    auto img = dir / "outdoor_concert.jpg";
    testutil::write_file(img, "not really a jpeg");
    mn::MockProvider p;
    mn::ModelIds models{"chat", "vision", "embed"};
    EXPECT_EQ(mn::describe_image(p, img.string(), "vision"), "A photograph of outdoor concert.");
    auto v = mn::image_view(p, "p001", img.string(), 1, models);
    EXPECT_EQ(v.view_id, "i001");
    EXPECT_EQ(v.kind, mn::ViewKind::image);
    EXPECT_EQ(*v.source, img.string());
    EXPECT_EQ(*v.raw_description, "A photograph of outdoor concert.");
    EXPECT_EQ(v.content, "A photograph of outdoor concert.");
}

TEST(ImageViews, RawAndRefinedBothKept) {
    testutil::TempDir dir;
    auto img = dir / "x.png";
    testutil::write_file(img, "png");
    mn::ScriptedProvider p({std::string("crowd. stage. lights"), std::string("A crowd gathers before a lit stage.")});
    auto v = mn::image_view(p, "p001", img.string(), 2, {"chat", "vision", "embed"});
    EXPECT_EQ(*v.raw_description, "crowd. stage. lights");
    EXPECT_EQ(v.content, "A crowd gathers before a lit stage.");
    auto reqs = p.requests();
    EXPECT_EQ(reqs[0].model, "vision");
    EXPECT_EQ(*reqs[0].messages.back().image, img.string());
    EXPECT_EQ(reqs[1].model, "chat");
    EXPECT_NE(reqs[1].messages.back().content.find("crowd. stage. lights"), std::string::npos);
}

TEST(ImageViews, Errors) {
    mn::MockProvider p;
    EXPECT_THROW(mn::describe_image(p, "/nonexistent/image.jpg", "v"), mn::SourceError);
    EXPECT_THROW(mn::rewrite_description(p, "  ", "m"), mn::InvalidArg);
    EXPECT_EQ(mn::rewrite_description(p, "unchanged text", "m"), "unchanged text");
    EXPECT_NO_THROW(mn::describe_image(p, "https://example.com/a.jpg", "v"));
}

TEST(Assemble, IdentityAndBlocks) {
    const std::string prompt = "What is true happiness in life?";
    EXPECT_EQ(mn::assemble_prompt(prompt, std::nullopt), prompt);
    mn::ViewRecord v;
    v.content = "happiness as social connection";
    auto out = mn::assemble_prompt(prompt, v);
    EXPECT_EQ(out, "Context:\nhappiness as social connection\n\nInstruction:\nUsing the context above as one "
                   "perspective, answer the following question:\nWhat is true happiness in life?");
    auto ctx = out.find("Context:"), ins = out.find("Instruction:"), q = out.find(prompt);
    EXPECT_LT(ctx, ins);
    EXPECT_LT(ins, q);
}

TEST(Assemble, EchoAnswerCarriesTheView) {
    mn::MockProvider p;
    mn::ViewRecord v;
    v.content = "A vibrant outdoor concert with a cheering crowd.";
    auto req = mn::user_request("m", mn::assemble_prompt("What is true happiness in life?", v), "generate");
    EXPECT_NE(p.chat(req).text.find("concert"), std::string::npos);
}

TEST(ImageManifest, ResolvesRelativePaths) {
    testutil::TempDir dir;
    testutil::write_file(dir / "images.jsonl",
                         "{\"prompt_id\":\"p001\",\"source\":\"img/a.jpg\"}\n\n"
                         "{\"prompt_id\":\"p002\",\"source\":\"https://example.com/b.jpg\"}\n");
    auto list = mn::load_image_manifest(dir / "images.jsonl");
    ASSERT_EQ(list.size(), 2u);
    EXPECT_EQ(list[0].source, (dir / "img/a.jpg").string());
    EXPECT_EQ(list[1].source, "https://example.com/b.jpg");
    testutil::write_file(dir / "bad.jsonl", "{\"prompt_id\":\"p001\"}\n");
    EXPECT_THROW(mn::load_image_manifest(dir / "bad.jsonl"), mn::ParseError);
}
