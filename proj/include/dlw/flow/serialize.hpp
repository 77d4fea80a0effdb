#pragma once

// Text model format. Reals are written as hexadecimal floating point so a
// round trip reproduces every parameter bit-for-bit.
//
//   dlw-flow 1
//   dim <d>
//   layers <K>
//   kind <affine|neural>
//   hidden_layers <n>
//   hidden_units <n>
//   neural_units <n>
//   perm <k> <p_0> ... <p_{d-1}>        (one line per layer)
//   params <count>
//   tensor <name> <rows> <cols>          (one line per tensor, values follow row-major)
//   <hex> <hex> ...
//   best_epoch <e>
//   train_log <rows>
//   <epoch> <train_hex> <val_hex>        (one line per epoch)

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

#include "dlw/error.hpp"
#include "dlw/flow/flow_model.hpp"

namespace dlw::flow {

namespace detail {

inline std::string hex_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
    if (ec != std::errc{}) throw Error("failed to format double");
    return std::string(buf, ptr);
}

inline double parse_hex_double(const std::string& tok, const std::string& path, std::size_t line) {
    double v = 0.0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    bool neg = false;
    if (first != last && *first == '-') {
        neg = true;
        ++first;
    }
    auto [ptr, ec] = std::from_chars(first, last, v, std::chars_format::hex);
    if (ec != std::errc{} || ptr != last) {
        throw ParseError(path, line, "malformed real '" + tok + "'");
    }
    return neg ? -v : v;
}

class LineReader {
public:
    LineReader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

    std::istringstream raw_line(const std::string& what) {
        std::string text;
        while (std::getline(in_, text)) {
            ++line_;
            if (!text.empty()) return std::istringstream(text);
        }
        throw ParseError(path_, line_, "unexpected end of file, expected " + what);
    }

    std::istringstream next(const std::string& expect_key) {
        auto ss = raw_line("'" + expect_key + "'");
        std::string key;
        ss >> key;
        if (key != expect_key) {
            throw ParseError(path_, line_, "expected '" + expect_key + "', found '" + key + "'");
        }
        return ss;
    }

    template <class T>
    T value(const std::string& key) {
        auto ss = next(key);
        T v{};
        if (!(ss >> v)) throw ParseError(path_, line_, "missing value for '" + key + "'");
        return v;
    }

    std::size_t line() const { return line_; }
    const std::string& path() const { return path_; }

private:
    std::istream& in_;
    std::string path_;
    std::size_t line_ = 0;
};

} // namespace detail

inline void write_model(std::ostream& out, const FlowModel& model) {
    const auto& a = model.architecture();
    out << "dlw-flow 1\n";
    out << "dim " << a.dim << "\n";
    out << "layers " << a.layers << "\n";
    out << "kind " << to_string(a.kind) << "\n";
    out << "hidden_layers " << a.hidden_layers << "\n";
    out << "hidden_units " << a.hidden_units << "\n";
    out << "neural_units " << a.neural_units << "\n";
    for (std::size_t k = 0; k < model.layers().size(); ++k) {
        out << "perm " << k;
        for (auto p : model.layers()[k].permutation()) out << ' ' << p;
        out << "\n";
    }
    const auto& params = model.params();
    out << "params " << params.entries().size() << "\n";
    for (const auto& e : params.entries()) {
        out << "tensor " << e.name << ' ' << e.rows << ' ' << e.cols << "\n";
        for (std::size_t i = 0; i < e.size(); ++i) {
            out << (i ? " " : "") << detail::hex_double(params.values()[e.offset + i]);
        }
        out << "\n";
    }
    out << "best_epoch " << model.best_epoch() << "\n";
    out << "train_log " << model.train_log().size() << "\n";
    for (const auto& r : model.train_log()) {
        out << r.epoch << ' ' << detail::hex_double(r.train_nll) << ' ' << detail::hex_double(r.val_nll) << "\n";
    }
}

inline FlowModel read_model(std::istream& in, const std::string& path = "<stream>") {
    detail::LineReader rd(in, path);
    {
        auto ss = rd.next("dlw-flow");
        int version = 0;
        if (!(ss >> version) || version != 1) throw ParseError(path, rd.line(), "unsupported model version");
    }
    FlowArchitecture a;
    a.dim = rd.value<Eigen::Index>("dim");
    a.layers = rd.value<Eigen::Index>("layers");
    try {
        a.kind = transformer_kind_from_string(rd.value<std::string>("kind"));
    } catch (const InvalidArgument& e) {
        throw ParseError(path, rd.line(), e.what());
    }
    a.hidden_layers = rd.value<Eigen::Index>("hidden_layers");
    a.hidden_units = rd.value<Eigen::Index>("hidden_units");
    a.neural_units = rd.value<Eigen::Index>("neural_units");

    FlowModel model = FlowModel::uninitialized(a);
    for (std::size_t k = 0; k < model.layers().size(); ++k) {
        auto ss = rd.next("perm");
        std::size_t idx = 0;
        ss >> idx;
        for (auto expected : model.layers()[k].permutation()) {
            Eigen::Index p = -1;
            if (!(ss >> p) || p != expected || idx != k) {
                throw ParseError(path, rd.line(), "layer permutation does not match architecture");
            }
        }
    }
    const auto count = rd.value<std::size_t>("params");
    auto& params = model.params();
    if (count != params.entries().size()) throw ParseError(path, rd.line(), "parameter tensor count mismatch");
    for (const auto& e : params.entries()) {
        auto ss = rd.next("tensor");
        std::string name;
        std::size_t rows = 0, cols = 0;
        ss >> name >> rows >> cols;
        if (name != e.name || rows != e.rows || cols != e.cols) {
            throw ParseError(path, rd.line(), "tensor '" + name + "' does not match architecture ('" + e.name + "')");
        }
        auto vals = rd.raw_line("values of '" + e.name + "'");
        std::string tok;
        std::size_t i = 0;
        while (vals >> tok) {
            if (i >= e.size()) throw ParseError(path, rd.line(), "too many values for '" + e.name + "'");
            params.values()[e.offset + i++] = detail::parse_hex_double(tok, path, rd.line());
        }
        if (i != e.size()) throw ParseError(path, rd.line(), "too few values for '" + e.name + "'");
    }
    model.set_best_epoch(rd.value<std::size_t>("best_epoch"));
    const auto rows = rd.value<std::size_t>("train_log");
    for (std::size_t r = 0; r < rows; ++r) {
        auto ss = rd.raw_line("train_log row");
        EpochRecord rec;
        std::string t, v;
        if (!(ss >> rec.epoch >> t >> v)) throw ParseError(path, rd.line(), "malformed train_log row");
        rec.train_nll = detail::parse_hex_double(t, path, rd.line());
        rec.val_nll = detail::parse_hex_double(v, path, rd.line());
        model.train_log().push_back(rec);
    }
    return model;
}

inline void save_model(const std::string& path, const FlowModel& model) {
    std::ofstream out(path);
    if (!out) throw IoError(path, "cannot open for writing");
    write_model(out, model);
    if (!out) throw IoError(path, "write failed");
}

inline FlowModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open for reading");
    return read_model(in, path);
}

} // namespace dlw::flow
