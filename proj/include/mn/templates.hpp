#pragma once

// Prompt templates with {slot} placeholders. The built-in texts are mirrored by the files in
// templates/; a directory of overrides can be loaded at run time.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "mn/error.hpp"

namespace mn {

class PromptTemplate {
  public:
    PromptTemplate() = default;
    explicit PromptTemplate(std::string text) : text_(std::move(text)) {}

    const std::string &text() const { return text_; }

    bool has_slot(std::string_view name) const {
        return text_.find("{" + std::string(name) + "}") != std::string::npos;
    }

    /// Single pass: substituted values are never rescanned, and braces that do not name a
    /// known slot are copied through unchanged.
    std::string render(const std::map<std::string, std::string> &slots) const {
        std::string out;
        out.reserve(text_.size());
        std::size_t i = 0;
        while (i < text_.size()) {
            if (text_[i] == '{') {
                auto close = text_.find('}', i + 1);
                if (close != std::string::npos) {
                    auto it = slots.find(text_.substr(i + 1, close - i - 1));
                    if (it != slots.end()) {
                        out += it->second;
                        i = close + 1;
                        continue;
                    }
                }
            }
            out.push_back(text_[i++]);
        }
        return out;
    }

  private:
    std::string text_;
};

namespace templates {

inline constexpr std::string_view kSummarize =
    "Please summarize the following text in no more than {max_words} words:\n"
    "{text}";

inline constexpr std::string_view kRelevance =
    "PROMPT:\n"
    "{prompt_text}\n"
    "ANSWER:\n"
    "{summarized_answer}\n"
    "Question: Is this answer relevant to the prompt, or is it irrelevant??\n"
    "Please respond with exactly one word: \"relevant\" or \"irrelevant\".";

inline constexpr std::string_view kIelts =
    "You are an IELTS examiner. Please evaluate the following essay and give a score between 1.0 "
    "and 9.0 based on the IELTS Writing Band Descriptors. The essay should be scored based on Task "
    "Response,  Coherence and Cohesion, Lexical Resource, and Grammatical Range and Accuracy.\n"
    "Question: {question}\n"
    "Essay: {essay}\n"
    "Please provide only a score between 1.0 and 9.0.";

inline constexpr std::string_view kStructure =
    "You are an English writing examiner. Please evaluate the following answer and give a score "
    "between 1.0 and 10.0 based on its grammar and overall English language structure: grammatical "
    "accuracy, sentence construction, coherence and cohesion, and vocabulary use.\n"
    "Question: {question}\n"
    "Answer: {answer}\n"
    "Please provide only a score between 1.0 and 10.0.";

inline constexpr std::string_view kNovelty =
    "You are a novelty detector. Decide whether the HYPOTHESIS introduces information that is not "
    "already present in any of the PREMISES.\n"
    "PREMISES:\n"
    "{premises}\n"
    "HYPOTHESIS:\n"
    "{hypothesis}\n"
    "Please respond with exactly one word: \"novel\" or \"redundant\".";

inline constexpr std::string_view kTextViews =
    "Generate {count} distinct perspectives on the prompt below. Each perspective should approach "
    "the question from a different angle, discipline, or stakeholder and be one to three sentences "
    "long. Do not answer the prompt directly.\n"
    "Return only a numbered list with one perspective per line, in the form \"1. <perspective>\".\n"
    "Prompt: {prompt}";

inline constexpr std::string_view kDescribe =
    "Describe this image in detail, covering the scene, the people and objects in it, their "
    "actions, the setting, and the overall mood.";

inline constexpr std::string_view kRewrite =
    "Rewrite and refine the following image description so that it reads as well-structured, "
    "coherent, and stylistically consistent prose. Keep every visual detail, do not add facts that "
    "are not in the description, and return only the rewritten description.\n"
    "Description:\n"
    "{description}";

inline constexpr std::string_view kAssemble =
    "Context:\n"
    "{view}\n"
    "\n"
    "Instruction:\n"
    "Using the context above as one perspective, answer the following question:\n"
    "{prompt}";

inline constexpr std::string_view kOneWordReminder = "Please respond with exactly one word: {choices}.";
inline constexpr std::string_view kScoreReminder =
    "Please respond with only a number between {low} and {high}.";

} // namespace templates

struct TemplateSet {
    PromptTemplate summarize{std::string(templates::kSummarize)};
    PromptTemplate relevance{std::string(templates::kRelevance)};
    PromptTemplate ielts{std::string(templates::kIelts)};
    PromptTemplate structure{std::string(templates::kStructure)};
    PromptTemplate novelty{std::string(templates::kNovelty)};
    PromptTemplate text_views{std::string(templates::kTextViews)};
    PromptTemplate describe{std::string(templates::kDescribe)};
    PromptTemplate rewrite{std::string(templates::kRewrite)};
    PromptTemplate assemble{std::string(templates::kAssemble)};

    /// Built-ins, overridden by any `<name>.txt` present in `dir`.
    static TemplateSet load(const std::filesystem::path &dir) {
        TemplateSet t;
        auto maybe = [&](const char *name, PromptTemplate &slot) {
            auto path = dir / (std::string(name) + ".txt");
            std::ifstream in(path, std::ios::binary);
            if (!in) return;
            std::ostringstream ss;
            ss << in.rdbuf();
            slot = PromptTemplate(ss.str());
        };
        maybe("summarize", t.summarize);
        maybe("relevance", t.relevance);
        maybe("ielts", t.ielts);
        maybe("structure", t.structure);
        maybe("novelty", t.novelty);
        maybe("text_views", t.text_views);
        maybe("describe", t.describe);
        maybe("rewrite", t.rewrite);
        maybe("assemble", t.assemble);
        if (!t.novelty.has_slot("hypothesis") || !t.novelty.has_slot("premises"))
            throw InvalidArg("novelty template must contain {hypothesis} and {premises}");
        return t;
    }

    static const TemplateSet &defaults() {
        static const TemplateSet t;
        return t;
    }
};

} // namespace mn
