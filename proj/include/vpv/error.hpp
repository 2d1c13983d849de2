#pragma once

#include <stdexcept>
#include <string>

namespace vpv {

/// Base of every error raised by the engine.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// ---- dsl ----

class SyntaxError : public Error {
  public:
    SyntaxError(int line, int column, const std::string &what)
        : Error("line " + std::to_string(line) + ", col " + std::to_string(column) + ": " + what), line_(line),
          column_(column) {}

    [[nodiscard]] int line() const noexcept { return line_; }
    [[nodiscard]] int column() const noexcept { return column_; }

  private:
    int line_;
    int column_;
};

class EmptyProgram : public Error {
  public:
    EmptyProgram() : Error("program has no statements") {}
};

// ---- runtime ----

class UnknownOp : public Error {
  public:
    explicit UnknownOp(const std::string &op) : Error("unknown operation '" + op + "'") {}
};

class UnknownVariable : public Error {
  public:
    explicit UnknownVariable(const std::string &name) : Error("unbound variable '" + name + "'") {}
};

class RebindError : public Error {
  public:
    explicit RebindError(const std::string &name) : Error("variable '" + name + "' is already bound") {}
};

/// A step could not produce candidates. Carries the step's line so the search can prune it.
class ExecutorFailure : public Error {
  public:
    ExecutorFailure(int line, const std::string &what)
        : Error("step at line " + std::to_string(line) + ": " + what), line_(line) {}

    [[nodiscard]] int line() const noexcept { return line_; }

  private:
    int line_;
};

class EmptyCandidates : public ExecutorFailure {
  public:
    explicit EmptyCandidates(int line) : ExecutorFailure(line, "backend returned no candidates") {}
};

class EmptyInput : public Error {
  public:
    explicit EmptyInput(const std::string &what) : Error(what) {}
};

class DimensionMismatch : public Error {
  public:
    explicit DimensionMismatch(const std::string &what) : Error(what) {}
};

class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string &what) : Error(what) {}
};

// ---- backends ----

class BackendFailure : public Error {
  public:
    enum class Kind { Timeout, Protocol, Server };

    BackendFailure(Kind kind, const std::string &what, double latency_ms = 0.0)
        : Error(std::string(kind_name(kind)) + ": " + what), kind_(kind), latency_ms_(latency_ms) {}

    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] double latency_ms() const noexcept { return latency_ms_; }

    static const char *kind_name(Kind k) noexcept {
        switch (k) {
        case Kind::Timeout:
            return "timeout";
        case Kind::Protocol:
            return "protocol";
        case Kind::Server:
            return "server";
        }
        return "unknown";
    }

  private:
    Kind kind_;
    double latency_ms_;
};

/// A mock handle was asked for a request its fixture table does not contain.
/// Deliberately not a BackendFailure: a missing fixture is a test-setup bug and must not be pruned away.
class FixtureMiss : public Error {
  public:
    explicit FixtureMiss(const std::string &key) : Error("no fixture for key " + key), key_(key) {}

    [[nodiscard]] const std::string &key() const noexcept { return key_; }

  private:
    std::string key_;
};

class RankUnavailable : public Error {
  public:
    explicit RankUnavailable(const std::string &what) : Error("ranking unavailable: " + what) {}
};

// ---- verification ----

class NoOppositeAvailable : public Error {
  public:
    explicit NoOppositeAvailable(const std::string &answer) : Error("no semantic opposite for '" + answer + "'") {}
};

class MissingScores : public Error {
  public:
    MissingScores() : Error("candidate set has candidates without a verification score") {}
};

// ---- search ----

class AllBranchesPruned : public Error {
  public:
    AllBranchesPruned() : Error("every proposed step failed") {}
};

class NoTraceFound : public Error {
  public:
    explicit NoTraceFound(const std::string &what = "open list exhausted") : Error(what) {}
};

class DepthExceeded : public Error {
  public:
    explicit DepthExceeded(int depth) : Error("search exceeded max depth " + std::to_string(depth)) {}
};

} // namespace vpv
