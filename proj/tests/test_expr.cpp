#include <gtest/gtest.h>

#include <map>

#include "vpv/expr.hpp"

using namespace vpv;

namespace {

ExprValue run(const std::string &text, const std::map<std::string, ExprValue> &vars = {}) {
    return Expression::parse(text).evaluate([&](const std::string &name) {
        const auto it = vars.find(name);
        if (it == vars.end()) {
            throw ExprError("unbound " + name);
        }
        return it->second;
    });
}

} // namespace

TEST(Expr, Arithmetic) {
    EXPECT_DOUBLE_EQ(std::get<double>(run("1 + 2 * 3")), 7.0);
    EXPECT_DOUBLE_EQ(std::get<double>(run("(1 + 2) * 3")), 9.0);
    EXPECT_DOUBLE_EQ(std::get<double>(run("-4 / 2")), -2.0);
    EXPECT_DOUBLE_EQ(std::get<double>(run("10 - 2 - 3")), 5.0);
    EXPECT_DOUBLE_EQ(std::get<double>(run("0.5 * 4")), 2.0);
}

TEST(Expr, ComparisonsAndLogic) {
    EXPECT_TRUE(std::get<bool>(run("2 > 1 and 1 <= 1")));
    EXPECT_FALSE(std::get<bool>(run("not True")));
    EXPECT_TRUE(std::get<bool>(run("False or 3 != 4")));
    EXPECT_TRUE(std::get<bool>(run("\"a\" < \"b\"")));
    EXPECT_TRUE(std::get<bool>(run("\"x\" == \"x\"")));
    EXPECT_FALSE(std::get<bool>(run("\"1\" == 1")));
}

TEST(Expr, TernaryWithPlaceholder) {
    const auto e = Expression::parse("\"yes\" if {COUNT0} > 0 else \"no\"");
    EXPECT_EQ(e.variables(), (std::set<std::string>{"COUNT0"}));
    EXPECT_EQ(std::get<std::string>(run("\"yes\" if {COUNT0} > 0 else \"no\"", {{"COUNT0", 2.0}})), "yes");
    EXPECT_EQ(std::get<std::string>(run("\"yes\" if {COUNT0} > 0 else \"no\"", {{"COUNT0", 0.0}})), "no");
}

TEST(Expr, StringConcatenation) {
    EXPECT_EQ(std::get<std::string>(run("{A} + \" \" + {B}", {{"A", std::string("red")}, {"B", std::string("car")}})),
              "red car");
}

TEST(Expr, Errors) {
    EXPECT_THROW(Expression::parse("1 +"), ExprError);
    EXPECT_THROW(Expression::parse("\"open"), ExprError);
    EXPECT_THROW(Expression::parse("{X"), ExprError);
    EXPECT_THROW(Expression::parse("foo"), ExprError);
    EXPECT_THROW(Expression::parse("1 if True"), ExprError);
    EXPECT_THROW(run("1 / 0"), ExprError);
    EXPECT_THROW(run("\"a\" * 2"), ExprError);
    EXPECT_THROW(run("\"a\" < 2"), ExprError);
    EXPECT_THROW(run("{MISSING}"), ExprError);
}

TEST(Expr, ToString) {
    EXPECT_EQ(to_string(ExprValue(3.0)), "3");
    EXPECT_EQ(to_string(ExprValue(0.25)), "0.25");
    EXPECT_EQ(to_string(ExprValue(true)), "True");
    EXPECT_EQ(to_string(ExprValue(std::string("hi"))), "hi");
}
