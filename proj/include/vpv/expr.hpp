#pragma once

// Expressions accepted by the EVAL operation, e.g.
//
//   '"yes" if {COUNT0} > 0 else "no"'
//
// Grammar (Python-flavoured): ternary `a if c else b`, or / and / not, comparisons,
// + - * /, unary minus, parentheses, numbers, "double-quoted strings", True / False,
// and {VAR} placeholders that read program variables.

#include <functional>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <variant>

#include "vpv/error.hpp"

namespace vpv {

class ExprError : public Error {
  public:
    explicit ExprError(const std::string &what) : Error("expression: " + what) {}
};

using ExprValue = std::variant<double, std::string, bool>;

class Expression {
  public:
    struct Node;

    /// Throws ExprError on malformed input.
    static Expression parse(std::string_view text);

    /// Placeholder names referenced by the expression.
    [[nodiscard]] const std::set<std::string> &variables() const noexcept { return vars_; }

    /// Evaluates with `lookup` resolving placeholders. Throws ExprError on type errors.
    [[nodiscard]] ExprValue evaluate(const std::function<ExprValue(const std::string &)> &lookup) const;

  private:
    std::shared_ptr<const Node> root_;
    std::set<std::string> vars_;
};

std::string to_string(const ExprValue &v);

} // namespace vpv
