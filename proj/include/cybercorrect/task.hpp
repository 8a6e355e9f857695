#pragma once

#include <optional>
#include <string>

#include "cybercorrect/core.hpp"

namespace cybercorrect {

enum class Category { MR, LR, Comm, MS };

inline const char* to_string(Category c) {
    switch (c) {
        case Category::MR: return "MR";
        case Category::LR: return "LR";
        case Category::Comm: return "Comm";
        case Category::MS: return "MS";
    }
    return "MR";
}

inline Category category_from_string(std::string_view s) {
    if (s == "MR") return Category::MR;
    if (s == "LR") return Category::LR;
    if (s == "Comm") return Category::Comm;
    if (s == "MS") return Category::MS;
    throw Error(Errc::schema_error, "unknown category: " + std::string(s));
}

struct ErrorAnnotation {
    ErrorType error_type = ErrorType::none;
    int location = 0;  // 1-based step index into the seeded chain

    bool operator==(const ErrorAnnotation&) const = default;
};

// One benchmark task. A task may ship a seeded reasoning chain with an
// embedded error (annotation present) or be clean (annotation absent); tasks
// without a seeded chain leave the initial generation to the plant.
struct BenchTask {
    std::string id;
    Category category = Category::MR;
    std::string question;
    std::optional<ReasoningChain> seeded_chain;
    std::optional<ErrorAnnotation> annotation;
    std::string gold_answer;  // normalized on load
    std::optional<std::string> ideal_correction;

    bool operator==(const BenchTask&) const = default;
};

}  // namespace cybercorrect
