#pragma once

// Line-oriented program language:
//
//   BOX0=LOC(image=IMAGE,object='nightstand')
//   ANS0=VQA(image=IMAGE,question='what is on the table?')
//   FINAL=RESULT(var=ANS0)
//
// One statement per line. Argument values are variable references, single-quoted strings
// (with \' and \\ escapes), numbers, or the booleans True / False. No nesting.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace vpv {

struct VarRef {
    std::string name;
    friend bool operator==(const VarRef &, const VarRef &) = default;
};

using ArgValue = std::variant<VarRef, std::string, double, bool>;

struct Step {
    std::string op;
    std::vector<std::pair<std::string, ArgValue>> args; // stored order is the serialization order
    std::string out_var;
    int line = 0;

    [[nodiscard]] const ArgValue *arg(std::string_view name) const;

    friend bool operator==(const Step &, const Step &) = default;
};

/// True when two steps are the same statement regardless of where they appear.
bool same_statement(const Step &a, const Step &b);

class Program {
  public:
    /// Throws EmptyProgram when `steps` is empty.
    explicit Program(std::vector<Step> steps, std::string source_text = {});

    [[nodiscard]] const std::vector<Step> &steps() const noexcept { return steps_; }
    [[nodiscard]] const std::string &source_text() const noexcept { return source_; }
    [[nodiscard]] std::size_t size() const noexcept { return steps_.size(); }

    /// Structural equality; the raw source text is not compared.
    friend bool operator==(const Program &a, const Program &b) { return a.steps_ == b.steps_; }

  private:
    std::vector<Step> steps_;
    std::string source_;
};

Program parse_program(std::string_view text);
std::string serialize(const Program &program);
std::string serialize(const Step &step);
std::string serialize(const ArgValue &value);

// ---- signatures and validation ----

enum class ValueType { Image, Box, Mask, Text, Number, Bool, List, Any, Expr };

std::string_view to_string(ValueType t);
std::optional<ValueType> value_type_from_string(std::string_view s);

/// `Any` on either side accepts; `Expr` arguments accept text.
bool type_accepts(ValueType expected, ValueType actual);

struct ArgSpec {
    std::string name;
    ValueType type = ValueType::Any;
};

struct Signature {
    std::vector<ArgSpec> args;
    ValueType output = ValueType::Any;
};

struct SignatureTable {
    std::map<std::string, Signature> ops;
    std::map<std::string, ValueType> inputs{{"IMAGE", ValueType::Image}};
    std::string terminal_op = "RESULT";
};

struct Violation {
    enum class Kind {
        UnknownOp,
        UnknownVariable,
        TypeMismatch,
        MissingArgument,
        UnknownArgument,
        MissingTerminal,
        BadExpression
    };

    Kind kind;
    int line;
    std::string detail;

    friend bool operator==(const Violation &, const Violation &) = default;
};

std::string_view to_string(Violation::Kind k);

struct ValidationReport {
    std::vector<Violation> violations;

    [[nodiscard]] bool ok() const noexcept { return violations.empty(); }
    [[nodiscard]] std::string to_string() const;
};

ValidationReport validate(const Program &program, const SignatureTable &table);

} // namespace vpv
