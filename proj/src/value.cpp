#include "vpv/value.hpp"

#include <charconv>
#include <stdexcept>

namespace vpv {

Box make_box(double x0, double y0, double x1, double y1, const ImageRef *bounds) {
    if (!(x1 > x0) || !(y1 > y0)) {
        throw std::invalid_argument("degenerate box");
    }
    if (bounds != nullptr && (x0 < 0 || y0 < 0 || x1 > bounds->width || y1 > bounds->height)) {
        throw std::invalid_argument("box outside image " + bounds->handle);
    }
    return Box{x0, y0, x1, y1};
}

Value::Value(List v) : data_(List{}) {
    for (std::size_t i = 1; i < v.items.size(); ++i) {
        if (v.items[i].type() != v.items[0].type()) {
            throw std::invalid_argument("list elements must share one type");
        }
    }
    data_ = std::move(v);
}

ValueType Value::type() const noexcept {
    switch (data_.index()) {
    case 0:
        return ValueType::Image;
    case 1:
        return ValueType::Box;
    case 2:
        return ValueType::Mask;
    case 3:
        return ValueType::Text;
    case 4:
        return ValueType::Number;
    case 5:
        return ValueType::Bool;
    default:
        return ValueType::List;
    }
}

bool operator==(const List &a, const List &b) { return a.items == b.items; }

bool operator==(const Value &a, const Value &b) { return a.data_ == b.data_; }

namespace {

std::string num(double d) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, d);
    return std::string(buf, r.ptr);
}

} // namespace

std::string summary(const Value &v) {
    return std::visit(
        [](const auto &x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, ImageRef>) {
                return "Image(" + x.handle + " " + std::to_string(x.width) + "x" + std::to_string(x.height) + ")";
            } else if constexpr (std::is_same_v<T, Box>) {
                return "Box(" + num(x.x0) + "," + num(x.y0) + "," + num(x.x1) + "," + num(x.y1) + ")";
            } else if constexpr (std::is_same_v<T, Mask>) {
                return "Mask(" + x.handle + (x.label.empty() ? "" : " " + x.label) + ")";
            } else if constexpr (std::is_same_v<T, std::string>) {
                return "'" + x + "'";
            } else if constexpr (std::is_same_v<T, double>) {
                return num(x);
            } else if constexpr (std::is_same_v<T, bool>) {
                return x ? "True" : "False";
            } else {
                std::string out = "[";
                for (std::size_t i = 0; i < x.items.size(); ++i) {
                    out += (i ? "," : "") + summary(x.items[i]);
                }
                return out + "]";
            }
        },
        v.storage());
}

nlohmann::json to_json(const Value &v) {
    using nlohmann::json;
    return std::visit(
        [](const auto &x) -> json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, ImageRef>) {
                return {{"image", x.handle}, {"width", x.width}, {"height", x.height}};
            } else if constexpr (std::is_same_v<T, Box>) {
                return {{"box", {x.x0, x.y0, x.x1, x.y1}}};
            } else if constexpr (std::is_same_v<T, Mask>) {
                return {{"mask", x.handle}, {"label", x.label}};
            } else if constexpr (std::is_same_v<T, std::string>) {
                return {{"text", x}};
            } else if constexpr (std::is_same_v<T, double>) {
                return {{"number", x}};
            } else if constexpr (std::is_same_v<T, bool>) {
                return {{"bool", x}};
            } else {
                json arr = json::array();
                for (const auto &item : x.items) {
                    arr.push_back(to_json(item));
                }
                return {{"list", arr}};
            }
        },
        v.storage());
}

Value value_from_json(const nlohmann::json &j) {
    if (j.contains("image")) {
        return ImageRef{j.at("image").get<std::string>(), j.value("width", 0), j.value("height", 0)};
    }
    if (j.contains("box")) {
        const auto &b = j.at("box");
        return make_box(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>());
    }
    if (j.contains("mask")) {
        return Mask{j.at("mask").get<std::string>(), j.value("label", std::string())};
    }
    if (j.contains("text")) {
        return j.at("text").get<std::string>();
    }
    if (j.contains("number")) {
        return j.at("number").get<double>();
    }
    if (j.contains("bool")) {
        return j.at("bool").get<bool>();
    }
    if (j.contains("list")) {
        List l;
        for (const auto &item : j.at("list")) {
            l.items.push_back(value_from_json(item));
        }
        return Value(std::move(l));
    }
    throw std::invalid_argument("unrecognised value record " + j.dump());
}

} // namespace vpv
