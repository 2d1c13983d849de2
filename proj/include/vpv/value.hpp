#pragma once

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vpv/dsl.hpp"

namespace vpv {

/// Opaque image handle (content digest or URL) with its pixel dimensions.
struct ImageRef {
    std::string handle;
    int width = 0;
    int height = 0;

    friend bool operator==(const ImageRef &, const ImageRef &) = default;
};

/// Pixel box, 0-indexed, half-open extent semantics for area: (x1-x0)*(y1-y0).
struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    [[nodiscard]] double area() const noexcept { return (x1 - x0) * (y1 - y0); }

    friend bool operator==(const Box &, const Box &) = default;
};

/// Throws std::invalid_argument unless x1 > x0, y1 > y0 and (when `bounds` is given) the box lies in the image.
Box make_box(double x0, double y0, double x1, double y1, const ImageRef *bounds = nullptr);

struct Mask {
    std::string handle;
    std::string label;

    friend bool operator==(const Mask &, const Mask &) = default;
};

class Value;

struct List {
    std::vector<Value> items;
};

class Value {
  public:
    using Storage = std::variant<ImageRef, Box, Mask, std::string, double, bool, List>;

    Value() : data_(false) {}
    Value(ImageRef v) : data_(std::move(v)) {}
    Value(Box v) : data_(v) {}
    Value(Mask v) : data_(std::move(v)) {}
    Value(std::string v) : data_(std::move(v)) {}
    Value(const char *v) : data_(std::string(v)) {}
    Value(double v) : data_(v) {}
    Value(int v) : data_(static_cast<double>(v)) {}
    Value(bool v) : data_(v) {}
    /// Throws std::invalid_argument for a list mixing tags.
    Value(List v);

    [[nodiscard]] ValueType type() const noexcept;
    [[nodiscard]] const Storage &storage() const noexcept { return data_; }

    template <class T> [[nodiscard]] const T *get_if() const noexcept { return std::get_if<T>(&data_); }
    template <class T> [[nodiscard]] bool is() const noexcept { return std::holds_alternative<T>(data_); }

    friend bool operator==(const Value &a, const Value &b);

  private:
    Storage data_;
};

bool operator==(const List &a, const List &b);

/// Compact human-readable form used in trace logs and ranker prompts.
std::string summary(const Value &v);

nlohmann::json to_json(const Value &v);
Value value_from_json(const nlohmann::json &j);

} // namespace vpv
