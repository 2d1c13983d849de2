#include "vpv/dsl.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "vpv/error.hpp"
#include "vpv/expr.hpp"

namespace vpv {

const ArgValue *Step::arg(std::string_view name) const {
    for (const auto &[k, v] : args) {
        if (k == name) {
            return &v;
        }
    }
    return nullptr;
}

bool same_statement(const Step &a, const Step &b) {
    return a.op == b.op && a.out_var == b.out_var && a.args == b.args;
}

Program::Program(std::vector<Step> steps, std::string source_text)
    : steps_(std::move(steps)), source_(std::move(source_text)) {
    if (steps_.empty()) {
        throw EmptyProgram();
    }
}

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

class LineParser {
  public:
    LineParser(std::string_view text, int line) : s_(text), line_(line) {}

    Step statement() {
        Step step;
        step.line = line_;
        skip_ws();
        step.out_var = ident("output variable");
        skip_ws();
        expect('=');
        skip_ws();
        step.op = ident("operation name");
        skip_ws();
        expect('(');
        skip_ws();
        if (peek() != ')') {
            std::set<std::string> seen;
            while (true) {
                skip_ws();
                const int key_col = col();
                std::string key = ident("argument name");
                if (!seen.insert(key).second) {
                    fail(key_col, "duplicate argument '" + key + "'");
                }
                skip_ws();
                expect('=');
                skip_ws();
                step.args.emplace_back(std::move(key), value());
                skip_ws();
                if (peek() == ',') {
                    ++pos_;
                    continue;
                }
                break;
            }
        }
        expect(')');
        skip_ws();
        if (pos_ != s_.size()) {
            fail(col(), std::string("unexpected '") + s_[pos_] + "' after statement");
        }
        return step;
    }

  private:
    [[nodiscard]] char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
    [[nodiscard]] int col() const { return static_cast<int>(pos_) + 1; }

    [[noreturn]] void fail(int column, const std::string &what) const { throw SyntaxError(line_, column, what); }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) {
            ++pos_;
        }
    }

    void expect(char c) {
        if (peek() != c) {
            if (pos_ >= s_.size()) {
                fail(col(), std::string("expected '") + c + "' before end of line");
            }
            fail(col(), std::string("expected '") + c + "', found '" + s_[pos_] + "'");
        }
        ++pos_;
    }

    std::string ident(const char *what) {
        if (!is_ident_start(peek())) {
            fail(col(), std::string("expected ") + what);
        }
        const std::size_t start = pos_;
        while (pos_ < s_.size() && is_ident_char(s_[pos_])) {
            ++pos_;
        }
        return std::string(s_.substr(start, pos_ - start));
    }

    ArgValue value() {
        const char c = peek();
        if (c == '\'') {
            return string_literal();
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.') {
            return number();
        }
        if (is_ident_start(c)) {
            std::string name = ident("value");
            if (name == "True") {
                return true;
            }
            if (name == "False") {
                return false;
            }
            return VarRef{std::move(name)};
        }
        if (c == '\0') {
            fail(col(), "expected a value before end of line");
        }
        fail(col(), std::string("unexpected '") + c + "' where a value was expected");
    }

    std::string string_literal() {
        const int open_col = col();
        ++pos_; // opening quote
        std::string out;
        while (true) {
            if (pos_ >= s_.size()) {
                fail(open_col, "unterminated string literal");
            }
            const char c = s_[pos_++];
            if (c == '\'') {
                return out;
            }
            if (c == '\\') {
                if (pos_ >= s_.size()) {
                    fail(open_col, "unterminated string literal");
                }
                const char e = s_[pos_++];
                if (e != '\'' && e != '\\') {
                    fail(col() - 1, std::string("unknown escape '\\") + e + "'");
                }
                out.push_back(e);
                continue;
            }
            out.push_back(c);
        }
    }

    double number() {
        const std::size_t start = pos_;
        while (pos_ < s_.size()) {
            const char c = s_[pos_];
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == 'e' || c == 'E' || c == '+' ||
                c == '-') {
                ++pos_;
            } else {
                break;
            }
        }
        std::string_view tok = s_.substr(start, pos_ - start);
        std::string_view body = tok;
        if (!body.empty() && body.front() == '+') {
            body.remove_prefix(1); // from_chars rejects a leading '+'
        }
        double v = 0.0;
        const auto [end, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
        if (ec != std::errc() || end != body.data() + body.size() || body.empty() || !std::isfinite(v)) {
            fail(static_cast<int>(start) + 1, "malformed number '" + std::string(tok) + "'");
        }
        return v;
    }

    std::string_view s_;
    int line_;
    std::size_t pos_ = 0;
};

std::string escape(const std::string &s) {
    std::string out;
    out.reserve(s.size() + 2);
    out.push_back('\'');
    for (char c : s) {
        if (c == '\'' || c == '\\') {
            out.push_back('\\');
        }
        out.push_back(c);
    }
    out.push_back('\'');
    return out;
}

} // namespace

Program parse_program(std::string_view text) {
    std::vector<Step> steps;
    std::set<std::string> outputs;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            nl = text.size();
        }
        std::string_view line = text.substr(pos, nl - pos);
        ++line_no;
        pos = nl + 1;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t'; })) {
            continue;
        }
        Step step = LineParser(line, line_no).statement();
        if (!outputs.insert(step.out_var).second) {
            throw SyntaxError(line_no, 1, "duplicate output variable '" + step.out_var + "'");
        }
        steps.push_back(std::move(step));
    }
    if (steps.empty()) {
        throw EmptyProgram();
    }
    return Program(std::move(steps), std::string(text));
}

std::string serialize(const ArgValue &value) {
    return std::visit(
        [](const auto &v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, VarRef>) {
                return v.name;
            } else if constexpr (std::is_same_v<T, std::string>) {
                return escape(v);
            } else if constexpr (std::is_same_v<T, bool>) {
                return v ? "True" : "False";
            } else {
                char buf[64];
                const auto res = std::to_chars(buf, buf + sizeof buf, v);
                return std::string(buf, res.ptr);
            }
        },
        value);
}

std::string serialize(const Step &step) {
    std::string out = step.out_var + "=" + step.op + "(";
    bool first = true;
    for (const auto &[k, v] : step.args) {
        if (!first) {
            out.push_back(',');
        }
        first = false;
        out += k;
        out.push_back('=');
        out += serialize(v);
    }
    out.push_back(')');
    return out;
}

std::string serialize(const Program &program) {
    std::string out;
    for (std::size_t i = 0; i < program.steps().size(); ++i) {
        if (i > 0) {
            out.push_back('\n');
        }
        out += serialize(program.steps()[i]);
    }
    return out;
}

// ---- signatures ----

std::string_view to_string(ValueType t) {
    switch (t) {
    case ValueType::Image:
        return "Image";
    case ValueType::Box:
        return "Box";
    case ValueType::Mask:
        return "Mask";
    case ValueType::Text:
        return "Text";
    case ValueType::Number:
        return "Number";
    case ValueType::Bool:
        return "Bool";
    case ValueType::List:
        return "List";
    case ValueType::Any:
        return "Any";
    case ValueType::Expr:
        return "Expr";
    }
    return "?";
}

std::optional<ValueType> value_type_from_string(std::string_view s) {
    for (auto t : {ValueType::Image, ValueType::Box, ValueType::Mask, ValueType::Text, ValueType::Number,
                   ValueType::Bool, ValueType::List, ValueType::Any, ValueType::Expr}) {
        if (to_string(t) == s) {
            return t;
        }
    }
    return std::nullopt;
}

bool type_accepts(ValueType expected, ValueType actual) {
    if (expected == ValueType::Any || actual == ValueType::Any) {
        return true;
    }
    if (expected == ValueType::Expr) {
        return actual == ValueType::Text;
    }
    return expected == actual;
}

std::string_view to_string(Violation::Kind k) {
    switch (k) {
    case Violation::Kind::UnknownOp:
        return "UnknownOp";
    case Violation::Kind::UnknownVariable:
        return "UnknownVariable";
    case Violation::Kind::TypeMismatch:
        return "TypeMismatch";
    case Violation::Kind::MissingArgument:
        return "MissingArgument";
    case Violation::Kind::UnknownArgument:
        return "UnknownArgument";
    case Violation::Kind::MissingTerminal:
        return "MissingTerminal";
    case Violation::Kind::BadExpression:
        return "BadExpression";
    }
    return "?";
}

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    for (const auto &v : violations) {
        os << vpv::to_string(v.kind) << ' ' << v.detail << " @ line " << v.line << '\n';
    }
    return os.str();
}

namespace {

ValueType literal_type(const ArgValue &v) {
    if (std::holds_alternative<std::string>(v)) {
        return ValueType::Text;
    }
    if (std::holds_alternative<double>(v)) {
        return ValueType::Number;
    }
    return ValueType::Bool;
}

} // namespace

ValidationReport validate(const Program &program, const SignatureTable &table) {
    ValidationReport report;
    auto add = [&](Violation::Kind k, int line, std::string detail) {
        report.violations.push_back({k, line, std::move(detail)});
    };

    std::map<std::string, ValueType> known = table.inputs;
    for (const Step &step : program.steps()) {
        const auto sig_it = table.ops.find(step.op);
        const Signature *sig = sig_it == table.ops.end() ? nullptr : &sig_it->second;
        if (sig == nullptr) {
            add(Violation::Kind::UnknownOp, step.line, step.op);
        }

        for (const auto &[name, value] : step.args) {
            const ArgSpec *spec = nullptr;
            if (sig != nullptr) {
                const auto it = std::find_if(sig->args.begin(), sig->args.end(),
                                             [&](const ArgSpec &a) { return a.name == name; });
                if (it == sig->args.end()) {
                    add(Violation::Kind::UnknownArgument, step.line, name);
                } else {
                    spec = &*it;
                }
            }

            ValueType actual = ValueType::Any;
            if (const auto *ref = std::get_if<VarRef>(&value)) {
                const auto k = known.find(ref->name);
                if (k == known.end()) {
                    add(Violation::Kind::UnknownVariable, step.line, ref->name);
                    continue;
                }
                actual = k->second;
            } else {
                actual = literal_type(value);
            }

            if (spec != nullptr && !type_accepts(spec->type, actual)) {
                add(Violation::Kind::TypeMismatch, step.line,
                    name + ": expected " + std::string(to_string(spec->type)) + ", got " +
                        std::string(to_string(actual)));
                continue;
            }

            if (spec != nullptr && spec->type == ValueType::Expr) {
                if (const auto *text = std::get_if<std::string>(&value)) {
                    try {
                        const Expression e = Expression::parse(*text);
                        for (const auto &var : e.variables()) {
                            if (!known.contains(var)) {
                                add(Violation::Kind::UnknownVariable, step.line, var);
                            }
                        }
                    } catch (const ExprError &err) {
                        add(Violation::Kind::BadExpression, step.line, err.what());
                    }
                }
            }
        }

        if (sig != nullptr) {
            for (const ArgSpec &a : sig->args) {
                if (step.arg(a.name) == nullptr) {
                    add(Violation::Kind::MissingArgument, step.line, a.name);
                }
            }
        }
        known[step.out_var] = sig != nullptr ? sig->output : ValueType::Any;
    }

    const Step &last = program.steps().back();
    if (last.op != table.terminal_op) {
        add(Violation::Kind::MissingTerminal, last.line, "last step is " + last.op + ", not " + table.terminal_op);
    }
    return report;
}

} // namespace vpv
