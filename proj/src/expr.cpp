#include "vpv/expr.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <vector>

namespace vpv {

struct Expression::Node {
    enum class Kind { Literal, Var, Unary, Binary, Ternary };
    Kind kind = Kind::Literal;
    ExprValue literal;
    std::string name; // variable name or operator
    std::vector<std::shared_ptr<const Node>> kids;
};

namespace {

using NodePtr = std::shared_ptr<const Expression::Node>;
using Node = Expression::Node;

struct Token {
    enum class Kind { Number, String, Ident, Var, Op, End };
    Kind kind;
    std::string text;
    double number = 0.0;
};

std::vector<Token> tokenize(std::string_view s) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < s.size()) {
        const char c = s[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i + 1 < s.size() && std::isdigit(s[i + 1]))) {
            std::size_t j = i;
            while (j < s.size() && (std::isdigit(static_cast<unsigned char>(s[j])) || s[j] == '.')) {
                ++j;
            }
            if (j < s.size() && (s[j] == 'e' || s[j] == 'E')) {
                std::size_t k = j + 1;
                if (k < s.size() && (s[k] == '+' || s[k] == '-')) {
                    ++k;
                }
                if (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) {
                    j = k;
                    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) {
                        ++j;
                    }
                }
            }
            double v = 0;
            const auto [end, ec] = std::from_chars(s.data() + i, s.data() + j, v);
            if (ec != std::errc() || end != s.data() + j) {
                throw ExprError("malformed number '" + std::string(s.substr(i, j - i)) + "'");
            }
            out.push_back({Token::Kind::Number, std::string(s.substr(i, j - i)), v});
            i = j;
            continue;
        }
        if (c == '"') {
            std::size_t j = i + 1;
            std::string text;
            while (j < s.size() && s[j] != '"') {
                text.push_back(s[j++]);
            }
            if (j >= s.size()) {
                throw ExprError("unterminated string");
            }
            out.push_back({Token::Kind::String, std::move(text)});
            i = j + 1;
            continue;
        }
        if (c == '{') {
            const std::size_t close = s.find('}', i);
            if (close == std::string_view::npos) {
                throw ExprError("unterminated placeholder");
            }
            std::string name(s.substr(i + 1, close - i - 1));
            if (name.empty() || !(std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_')) {
                throw ExprError("bad placeholder '{" + name + "}'");
            }
            for (char ch : name) {
                if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_')) {
                    throw ExprError("bad placeholder '{" + name + "}'");
                }
            }
            out.push_back({Token::Kind::Var, std::move(name)});
            i = close + 1;
            continue;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t j = i;
            while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) {
                ++j;
            }
            out.push_back({Token::Kind::Ident, std::string(s.substr(i, j - i))});
            i = j;
            continue;
        }
        static constexpr std::string_view two[] = {"==", "!=", "<=", ">="};
        bool matched = false;
        for (auto op : two) {
            if (s.substr(i, 2) == op) {
                out.push_back({Token::Kind::Op, std::string(op)});
                i += 2;
                matched = true;
                break;
            }
        }
        if (matched) {
            continue;
        }
        if (std::string_view("<>+-*/()").find(c) != std::string_view::npos) {
            out.push_back({Token::Kind::Op, std::string(1, c)});
            ++i;
            continue;
        }
        throw ExprError(std::string("unexpected character '") + c + "'");
    }
    out.push_back({Token::Kind::End, ""});
    return out;
}

class Parser {
  public:
    Parser(std::vector<Token> toks, std::set<std::string> &vars) : toks_(std::move(toks)), vars_(vars) {}

    NodePtr parse() {
        NodePtr n = ternary();
        if (cur().kind != Token::Kind::End) {
            throw ExprError("unexpected '" + cur().text + "'");
        }
        return n;
    }

  private:
    const Token &cur() const { return toks_[pos_]; }
    bool is_word(const char *w) const { return cur().kind == Token::Kind::Ident && cur().text == w; }
    bool is_op(const char *o) const { return cur().kind == Token::Kind::Op && cur().text == o; }

    static NodePtr make(Node::Kind k, std::string name, std::vector<NodePtr> kids) {
        auto n = std::make_shared<Node>();
        n->kind = k;
        n->name = std::move(name);
        n->kids = std::move(kids);
        return n;
    }

    NodePtr ternary() {
        NodePtr then = disjunction();
        if (is_word("if")) {
            ++pos_;
            NodePtr cond = disjunction();
            if (!is_word("else")) {
                throw ExprError("expected 'else'");
            }
            ++pos_;
            NodePtr other = ternary();
            return make(Node::Kind::Ternary, "if", {cond, then, other});
        }
        return then;
    }

    NodePtr disjunction() {
        NodePtr lhs = conjunction();
        while (is_word("or")) {
            ++pos_;
            lhs = make(Node::Kind::Binary, "or", {lhs, conjunction()});
        }
        return lhs;
    }

    NodePtr conjunction() {
        NodePtr lhs = negation();
        while (is_word("and")) {
            ++pos_;
            lhs = make(Node::Kind::Binary, "and", {lhs, negation()});
        }
        return lhs;
    }

    NodePtr negation() {
        if (is_word("not")) {
            ++pos_;
            return make(Node::Kind::Unary, "not", {negation()});
        }
        return comparison();
    }

    NodePtr comparison() {
        NodePtr lhs = additive();
        for (const char *op : {"==", "!=", "<=", ">=", "<", ">"}) {
            if (is_op(op)) {
                ++pos_;
                return make(Node::Kind::Binary, op, {lhs, additive()});
            }
        }
        return lhs;
    }

    NodePtr additive() {
        NodePtr lhs = multiplicative();
        while (is_op("+") || is_op("-")) {
            std::string op = cur().text;
            ++pos_;
            lhs = make(Node::Kind::Binary, op, {lhs, multiplicative()});
        }
        return lhs;
    }

    NodePtr multiplicative() {
        NodePtr lhs = unary();
        while (is_op("*") || is_op("/")) {
            std::string op = cur().text;
            ++pos_;
            lhs = make(Node::Kind::Binary, op, {lhs, unary()});
        }
        return lhs;
    }

    NodePtr unary() {
        if (is_op("-")) {
            ++pos_;
            return make(Node::Kind::Unary, "-", {unary()});
        }
        return primary();
    }

    NodePtr primary() {
        const Token &t = cur();
        auto lit = [&](ExprValue v) {
            auto n = std::make_shared<Node>();
            n->kind = Node::Kind::Literal;
            n->literal = std::move(v);
            ++pos_;
            return NodePtr(n);
        };
        switch (t.kind) {
        case Token::Kind::Number:
            return lit(t.number);
        case Token::Kind::String:
            return lit(t.text);
        case Token::Kind::Var: {
            vars_.insert(t.text);
            auto n = std::make_shared<Node>();
            n->kind = Node::Kind::Var;
            n->name = t.text;
            ++pos_;
            return n;
        }
        case Token::Kind::Ident:
            if (t.text == "True") {
                return lit(true);
            }
            if (t.text == "False") {
                return lit(false);
            }
            throw ExprError("unknown name '" + t.text + "' (variables are written {NAME})");
        case Token::Kind::Op:
            if (t.text == "(") {
                ++pos_;
                NodePtr inner = ternary();
                if (!is_op(")")) {
                    throw ExprError("expected ')'");
                }
                ++pos_;
                return inner;
            }
            throw ExprError("unexpected '" + t.text + "'");
        case Token::Kind::End:
            throw ExprError("unexpected end of expression");
        }
        throw ExprError("unreachable");
    }

    std::vector<Token> toks_;
    std::set<std::string> &vars_;
    std::size_t pos_ = 0;
};

bool truthy(const ExprValue &v) {
    if (const auto *b = std::get_if<bool>(&v)) {
        return *b;
    }
    if (const auto *d = std::get_if<double>(&v)) {
        return *d != 0.0;
    }
    return !std::get<std::string>(v).empty();
}

double as_number(const ExprValue &v, const std::string &op) {
    if (const auto *d = std::get_if<double>(&v)) {
        return *d;
    }
    if (const auto *b = std::get_if<bool>(&v)) {
        return *b ? 1.0 : 0.0;
    }
    throw ExprError("operator '" + op + "' needs numbers, got text");
}

ExprValue eval(const Node &n, const std::function<ExprValue(const std::string &)> &lookup) {
    switch (n.kind) {
    case Node::Kind::Literal:
        return n.literal;
    case Node::Kind::Var:
        return lookup(n.name);
    case Node::Kind::Unary: {
        ExprValue v = eval(*n.kids[0], lookup);
        if (n.name == "not") {
            return !truthy(v);
        }
        return -as_number(v, "-");
    }
    case Node::Kind::Ternary:
        return truthy(eval(*n.kids[0], lookup)) ? eval(*n.kids[1], lookup) : eval(*n.kids[2], lookup);
    case Node::Kind::Binary:
        break;
    }

    const std::string &op = n.name;
    if (op == "and") {
        ExprValue a = eval(*n.kids[0], lookup);
        return truthy(a) ? eval(*n.kids[1], lookup) : a;
    }
    if (op == "or") {
        ExprValue a = eval(*n.kids[0], lookup);
        return truthy(a) ? a : eval(*n.kids[1], lookup);
    }

    const ExprValue a = eval(*n.kids[0], lookup);
    const ExprValue b = eval(*n.kids[1], lookup);
    const bool both_text = std::holds_alternative<std::string>(a) && std::holds_alternative<std::string>(b);
    const bool any_text = std::holds_alternative<std::string>(a) || std::holds_alternative<std::string>(b);

    if (op == "==" || op == "!=") {
        bool eq = false;
        if (both_text) {
            eq = std::get<std::string>(a) == std::get<std::string>(b);
        } else if (!any_text) {
            eq = as_number(a, op) == as_number(b, op);
        }
        return op == "==" ? eq : !eq;
    }
    if (op == "<" || op == "<=" || op == ">" || op == ">=") {
        int cmp = 0;
        if (both_text) {
            cmp = std::get<std::string>(a).compare(std::get<std::string>(b));
        } else if (!any_text) {
            const double x = as_number(a, op);
            const double y = as_number(b, op);
            cmp = x < y ? -1 : (x > y ? 1 : 0);
        } else {
            throw ExprError("cannot order text against a number");
        }
        if (op == "<") {
            return cmp < 0;
        }
        if (op == "<=") {
            return cmp <= 0;
        }
        if (op == ">") {
            return cmp > 0;
        }
        return cmp >= 0;
    }
    if (op == "+" && both_text) {
        return std::get<std::string>(a) + std::get<std::string>(b);
    }
    const double x = as_number(a, op);
    const double y = as_number(b, op);
    if (op == "+") {
        return x + y;
    }
    if (op == "-") {
        return x - y;
    }
    if (op == "*") {
        return x * y;
    }
    if (y == 0.0) {
        throw ExprError("division by zero");
    }
    return x / y;
}

} // namespace

Expression Expression::parse(std::string_view text) {
    Expression e;
    Parser p(tokenize(text), e.vars_);
    e.root_ = p.parse();
    return e;
}

ExprValue Expression::evaluate(const std::function<ExprValue(const std::string &)> &lookup) const {
    return eval(*root_, lookup);
}

std::string to_string(const ExprValue &v) {
    if (const auto *s = std::get_if<std::string>(&v)) {
        return *s;
    }
    if (const auto *b = std::get_if<bool>(&v)) {
        return *b ? "True" : "False";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, std::get<double>(v));
    return std::string(buf, res.ptr);
}

} // namespace vpv
