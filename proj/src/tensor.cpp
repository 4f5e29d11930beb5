#include "patchgt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "json.hpp"
#include "patchgt/errors.hpp"

namespace patchgt {

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// max(z,0) - z*y + log(1 + exp(-|z|)); the usual overflow-free form.
double bce_term(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

void accumulate(Mat& dst, const Mat& src) {
    for (size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += src.a[i];
}

}  // namespace

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return (int)nodes_.size() - 1;
}

int Tape::check_mine(Tensor t) const {
    if (t.tape != this || t.id < 0 || t.id >= (int)nodes_.size())
        throw ContractError("tensor does not belong to this tape");
    return t.id;
}

const Tape::Node& Tape::node_of(Tensor t) const { return nodes_[check_mine(t)]; }

Tensor Tape::leaf(const Mat& value) {
    Node n;
    n.value = value;
    n.grad = Mat(value.rows, value.cols);
    n.op = Op::leaf;
    n.tracked = true;
    return {this, push(std::move(n))};
}

Tensor Tape::constant(const Mat& value) {
    Node n;
    n.value = value;
    n.op = Op::constant;
    return {this, push(std::move(n))};
}

const Mat& Tape::value(Tensor t) const { return node_of(t).value; }

const Mat& Tape::grad(Tensor t) const {
    const Node& n = node_of(t);
    if (!n.tracked) throw ContractError("grad: tensor is not a tracked leaf");
    return n.grad;
}

Tensor Tape::matmul(Tensor a, Tensor b) {
    int ia = check_mine(a), ib = check_mine(b);
    const Mat& x = nodes_[ia].value;
    const Mat& y = nodes_[ib].value;
    if (x.cols != y.rows) throw ContractError("matmul: inner dimensions disagree");
    Node n;
    n.value = patchgt::matmul(x, y);
    n.op = Op::matmul;
    n.a = ia;
    n.b = ib;
    return {this, push(std::move(n))};
}

Tensor Tape::add(Tensor a, Tensor b) {
    int ia = check_mine(a), ib = check_mine(b);
    const Mat& x = nodes_[ia].value;
    const Mat& y = nodes_[ib].value;
    Node n;
    n.a = ia;
    n.b = ib;
    if (x.rows == y.rows && x.cols == y.cols) {
        n.op = Op::add;
        n.value = x;
        accumulate(n.value, y);
    } else if (y.rows == 1 && y.cols == x.cols) {
        n.op = Op::add_bias;
        n.value = x;
        for (size_t i = 0; i < x.rows; ++i)
            for (size_t j = 0; j < x.cols; ++j) n.value.at(i, j) += y.at(0, j);
    } else {
        throw ContractError("add: shapes must match, or the second argument "
                            "must be a broadcastable row vector");
    }
    return {this, push(std::move(n))};
}

Tensor Tape::scalar_mul(Tensor a, double s) {
    int ia = check_mine(a);
    Node n;
    n.value = nodes_[ia].value;
    for (double& v : n.value.a) v *= s;
    n.op = Op::scalar_mul;
    n.a = ia;
    n.scalar = s;
    return {this, push(std::move(n))};
}

Tensor Tape::scale_by(Tensor a, Tensor s) {
    int ia = check_mine(a), is = check_mine(s);
    const Mat& sv = nodes_[is].value;
    if (sv.rows != 1 || sv.cols != 1)
        throw ContractError("scale_by: scale must be a 1x1 tensor");
    Node n;
    n.value = nodes_[ia].value;
    for (double& v : n.value.a) v *= sv.at(0, 0);
    n.op = Op::scale_by;
    n.a = ia;
    n.b = is;
    return {this, push(std::move(n))};
}

Tensor Tape::mask_mul(Tensor a, const Mat& mask) {
    int ia = check_mine(a);
    const Mat& x = nodes_[ia].value;
    if (x.rows != mask.rows || x.cols != mask.cols)
        throw ContractError("mask_mul: mask shape disagrees");
    Node n;
    n.value = x;
    for (size_t i = 0; i < n.value.a.size(); ++i) n.value.a[i] *= mask.a[i];
    n.op = Op::mask_mul;
    n.a = ia;
    n.aux = mask;
    return {this, push(std::move(n))};
}

Tensor Tape::relu(Tensor a) {
    int ia = check_mine(a);
    Node n;
    n.value = nodes_[ia].value;
    for (double& v : n.value.a) v = std::max(v, 0.0);
    n.op = Op::relu;
    n.a = ia;
    return {this, push(std::move(n))};
}

Tensor Tape::sigmoid(Tensor a) {
    int ia = check_mine(a);
    Node n;
    n.value = nodes_[ia].value;
    for (double& v : n.value.a) v = stable_sigmoid(v);
    n.op = Op::sigmoid;
    n.a = ia;
    return {this, push(std::move(n))};
}

Tensor Tape::softmax_last(Tensor a) {
    int ia = check_mine(a);
    const Mat& x = nodes_[ia].value;
    if (x.cols < 1) throw ContractError("softmax_last: empty rows");
    Node n;
    n.value = Mat(x.rows, x.cols);
    for (size_t i = 0; i < x.rows; ++i) {
        double m = x.at(i, 0);
        for (size_t j = 1; j < x.cols; ++j) m = std::max(m, x.at(i, j));
        double sum = 0.0;
        for (size_t j = 0; j < x.cols; ++j) {
            const double e = std::exp(x.at(i, j) - m);
            n.value.at(i, j) = e;
            sum += e;
        }
        for (size_t j = 0; j < x.cols; ++j) n.value.at(i, j) /= sum;
    }
    n.op = Op::softmax_last;
    n.a = ia;
    return {this, push(std::move(n))};
}

Tensor Tape::linear(Tensor x, Tensor w, Tensor b) {
    int ix = check_mine(x), iw = check_mine(w), ib = check_mine(b);
    const Mat& xv = nodes_[ix].value;
    const Mat& wv = nodes_[iw].value;
    const Mat& bv = nodes_[ib].value;
    if (xv.cols != wv.cols)
        throw ContractError("linear: input width and weight width disagree");
    if (bv.rows != 1 || bv.cols != wv.rows)
        throw ContractError("linear: bias must be 1 x out");
    Node n;
    n.value = Mat(xv.rows, wv.rows);
    for (size_t i = 0; i < xv.rows; ++i)
        for (size_t o = 0; o < wv.rows; ++o) {
            double s = bv.at(0, o);
            for (size_t j = 0; j < xv.cols; ++j) s += xv.at(i, j) * wv.at(o, j);
            n.value.at(i, o) = s;
        }
    n.op = Op::linear;
    n.a = ix;
    n.b = iw;
    n.c = ib;
    return {this, push(std::move(n))};
}

Tensor Tape::row_max_pool(Tensor a) {
    int ia = check_mine(a);
    const Mat& x = nodes_[ia].value;
    if (x.rows < 1) throw ContractError("row_max_pool: no rows");
    Node n;
    n.value = Mat(1, x.cols);
    n.memo.assign(x.cols, 0);
    for (size_t j = 0; j < x.cols; ++j) {
        size_t best = 0;
        for (size_t i = 1; i < x.rows; ++i)
            if (x.at(i, j) > x.at(best, j)) best = i;
        n.memo[j] = best;
        n.value.at(0, j) = x.at(best, j);
    }
    n.op = Op::row_max_pool;
    n.a = ia;
    return {this, push(std::move(n))};
}

Tensor Tape::row_sum_pool(Tensor a) {
    int ia = check_mine(a);
    const Mat& x = nodes_[ia].value;
    Node n;
    n.value = Mat(1, x.cols);
    for (size_t i = 0; i < x.rows; ++i)
        for (size_t j = 0; j < x.cols; ++j) n.value.at(0, j) += x.at(i, j);
    n.op = Op::row_sum_pool;
    n.a = ia;
    return {this, push(std::move(n))};
}

Tensor Tape::mean(Tensor a) {
    int ia = check_mine(a);
    const Mat& x = nodes_[ia].value;
    if (x.a.empty()) throw ContractError("mean: empty tensor");
    double s = 0.0;
    for (double v : x.a) s += v;
    Node n;
    n.value = Mat(1, 1);
    n.value.at(0, 0) = s / (double)x.a.size();
    n.op = Op::mean;
    n.a = ia;
    return {this, push(std::move(n))};
}

Tensor Tape::concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no parts");
    Node n;
    size_t rows = 0;
    const size_t cols = node_of(parts[0]).value.cols;
    for (Tensor t : parts) {
        const Mat& v = node_of(t).value;
        if (v.cols != cols) throw ContractError("concat_rows: column widths disagree");
        rows += v.rows;
        n.parts.push_back(t.id);
    }
    n.value = Mat(rows, cols);
    size_t r = 0;
    for (Tensor t : parts) {
        const Mat& v = node_of(t).value;
        std::copy(v.a.begin(), v.a.end(), n.value.a.begin() + r * cols);
        r += v.rows;
    }
    n.op = Op::concat_rows;
    return {this, push(std::move(n))};
}

Tensor Tape::concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no parts");
    Node n;
    size_t cols = 0;
    const size_t rows = node_of(parts[0]).value.rows;
    for (Tensor t : parts) {
        const Mat& v = node_of(t).value;
        if (v.rows != rows) throw ContractError("concat_cols: row counts disagree");
        cols += v.cols;
        n.parts.push_back(t.id);
    }
    n.value = Mat(rows, cols);
    size_t c = 0;
    for (Tensor t : parts) {
        const Mat& v = node_of(t).value;
        for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < v.cols; ++j) n.value.at(i, c + j) = v.at(i, j);
        c += v.cols;
    }
    n.op = Op::concat_cols;
    return {this, push(std::move(n))};
}

Tensor Tape::transpose(Tensor a) {
    int ia = check_mine(a);
    Node n;
    n.value = patchgt::transpose(nodes_[ia].value);
    n.op = Op::transpose;
    n.a = ia;
    return {this, push(std::move(n))};
}

Tensor Tape::bce_masked(Tensor logits, const Mat& targets) {
    int ia = check_mine(logits);
    const Mat& z = nodes_[ia].value;
    if (z.rows != targets.rows || z.cols != targets.cols)
        throw ContractError("bce_masked: logits and targets shapes disagree");
    double sum = 0.0;
    int unmasked = 0;
    for (size_t i = 0; i < z.a.size(); ++i) {
        const double y = targets.a[i];
        if (std::isnan(y)) continue;
        sum += bce_term(z.a[i], y);
        ++unmasked;
    }
    Node n;
    n.value = Mat(1, 1);
    n.value.at(0, 0) = unmasked ? sum / unmasked : 0.0;
    n.op = Op::bce_masked;
    n.a = ia;
    n.aux = targets;
    n.scalar = (double)unmasked;
    return {this, push(std::move(n))};
}

void Tape::backward(Tensor root) {
    const int rid = check_mine(root);
    const Mat& rv = nodes_[rid].value;
    if (rv.rows != 1 || rv.cols != 1)
        throw ContractError("backward: root must be a 1x1 scalar");

    std::vector<Mat> adj(nodes_.size());
    auto sink = [&](int id) -> Mat& {
        if (adj[id].a.empty())
            adj[id] = Mat(nodes_[id].value.rows, nodes_[id].value.cols);
        return adj[id];
    };
    sink(rid).at(0, 0) = 1.0;

    for (int id = rid; id >= 0; --id) {
        if (adj[id].a.empty()) continue;  // not upstream of the root
        const Node& nd = nodes_[id];
        const Mat& g = adj[id];
        switch (nd.op) {
            case Op::leaf:
            case Op::constant:
                break;
            case Op::matmul: {
                accumulate(sink(nd.a),
                           patchgt::matmul(g, patchgt::transpose(nodes_[nd.b].value)));
                accumulate(sink(nd.b),
                           patchgt::matmul(patchgt::transpose(nodes_[nd.a].value), g));
                break;
            }
            case Op::add: {
                accumulate(sink(nd.a), g);
                accumulate(sink(nd.b), g);
                break;
            }
            case Op::add_bias: {
                accumulate(sink(nd.a), g);
                Mat& db = sink(nd.b);
                for (size_t i = 0; i < g.rows; ++i)
                    for (size_t j = 0; j < g.cols; ++j) db.at(0, j) += g.at(i, j);
                break;
            }
            case Op::scalar_mul: {
                Mat& da = sink(nd.a);
                for (size_t i = 0; i < g.a.size(); ++i) da.a[i] += nd.scalar * g.a[i];
                break;
            }
            case Op::scale_by: {
                const double s = nodes_[nd.b].value.at(0, 0);
                const Mat& x = nodes_[nd.a].value;
                Mat& da = sink(nd.a);
                double ds = 0.0;
                for (size_t i = 0; i < g.a.size(); ++i) {
                    da.a[i] += s * g.a[i];
                    ds += x.a[i] * g.a[i];
                }
                sink(nd.b).at(0, 0) += ds;
                break;
            }
            case Op::mask_mul: {
                Mat& da = sink(nd.a);
                for (size_t i = 0; i < g.a.size(); ++i) da.a[i] += nd.aux.a[i] * g.a[i];
                break;
            }
            case Op::relu: {
                const Mat& x = nodes_[nd.a].value;
                Mat& da = sink(nd.a);
                for (size_t i = 0; i < g.a.size(); ++i)
                    if (x.a[i] > 0.0) da.a[i] += g.a[i];
                break;
            }
            case Op::sigmoid: {
                const Mat& y = nd.value;
                Mat& da = sink(nd.a);
                for (size_t i = 0; i < g.a.size(); ++i)
                    da.a[i] += g.a[i] * y.a[i] * (1.0 - y.a[i]);
                break;
            }
            case Op::softmax_last: {
                const Mat& y = nd.value;
                Mat& da = sink(nd.a);
                for (size_t i = 0; i < y.rows; ++i) {
                    double dot = 0.0;
                    for (size_t j = 0; j < y.cols; ++j) dot += g.at(i, j) * y.at(i, j);
                    for (size_t j = 0; j < y.cols; ++j)
                        da.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
                }
                break;
            }
            case Op::linear: {
                const Mat& x = nodes_[nd.a].value;
                const Mat& w = nodes_[nd.b].value;
                Mat& dx = sink(nd.a);
                Mat& dw = sink(nd.b);
                Mat& db = sink(nd.c);
                for (size_t i = 0; i < g.rows; ++i)
                    for (size_t o = 0; o < g.cols; ++o) {
                        const double go = g.at(i, o);
                        if (go == 0.0) continue;
                        db.at(0, o) += go;
                        for (size_t j = 0; j < x.cols; ++j) {
                            dx.at(i, j) += go * w.at(o, j);
                            dw.at(o, j) += go * x.at(i, j);
                        }
                    }
                break;
            }
            case Op::row_max_pool: {
                Mat& da = sink(nd.a);
                for (size_t j = 0; j < g.cols; ++j) da.at(nd.memo[j], j) += g.at(0, j);
                break;
            }
            case Op::row_sum_pool: {
                Mat& da = sink(nd.a);
                for (size_t i = 0; i < da.rows; ++i)
                    for (size_t j = 0; j < da.cols; ++j) da.at(i, j) += g.at(0, j);
                break;
            }
            case Op::mean: {
                Mat& da = sink(nd.a);
                const double v = g.at(0, 0) / (double)da.a.size();
                for (double& d : da.a) d += v;
                break;
            }
            case Op::concat_rows: {
                size_t r = 0;
                for (int pid : nd.parts) {
                    Mat& dp = sink(pid);
                    for (size_t i = 0; i < dp.rows; ++i)
                        for (size_t j = 0; j < dp.cols; ++j)
                            dp.at(i, j) += g.at(r + i, j);
                    r += dp.rows;
                }
                break;
            }
            case Op::concat_cols: {
                size_t c = 0;
                for (int pid : nd.parts) {
                    Mat& dp = sink(pid);
                    for (size_t i = 0; i < dp.rows; ++i)
                        for (size_t j = 0; j < dp.cols; ++j)
                            dp.at(i, j) += g.at(i, c + j);
                    c += dp.cols;
                }
                break;
            }
            case Op::transpose: {
                accumulate(sink(nd.a), patchgt::transpose(g));
                break;
            }
            case Op::bce_masked: {
                if (nd.scalar == 0.0) break;  // fully masked: zero gradient
                const Mat& z = nodes_[nd.a].value;
                Mat& da = sink(nd.a);
                const double scale = g.at(0, 0) / nd.scalar;
                for (size_t i = 0; i < z.a.size(); ++i) {
                    const double y = nd.aux.a[i];
                    if (std::isnan(y)) continue;
                    da.a[i] += scale * (stable_sigmoid(z.a[i]) - y);
                }
                break;
            }
        }
    }

    for (size_t id = 0; id < nodes_.size(); ++id)
        if (nodes_[id].tracked && !adj[id].a.empty())
            accumulate(nodes_[id].grad, adj[id]);
}

void Tape::zero_grad() {
    for (Node& n : nodes_)
        if (n.tracked) std::fill(n.grad.a.begin(), n.grad.a.end(), 0.0);
}

void save_checkpoint(const std::vector<std::pair<std::string, Mat>>& tensors,
                     const std::string& path) {
    nlohmann::json manifest;
    manifest["tensors"] = nlohmann::json::array();
    for (const auto& [name, m] : tensors)
        manifest["tensors"].push_back(
            {{"name", name}, {"rows", m.rows}, {"cols", m.cols}});

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError(path, "cannot open for writing");
    out << manifest.dump() << '\n';
    for (const auto& [name, m] : tensors)
        for (double v : m.a) {
            uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            unsigned char bytes[8];
            for (int k = 0; k < 8; ++k) bytes[k] = (unsigned char)(bits >> (8 * k));
            out.write(reinterpret_cast<const char*>(bytes), 8);
        }
    if (!out) throw IngestError(path, "write failed");
}

std::vector<std::pair<std::string, Mat>> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError(path, "cannot open");
    std::string line;
    if (!std::getline(in, line)) throw IngestError(path, "missing manifest line");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw IngestError(path, std::string("bad manifest: ") + e.what());
    }
    if (!manifest.contains("tensors") || !manifest["tensors"].is_array())
        throw IngestError(path, "manifest lacks a tensors array");

    std::vector<std::pair<std::string, Mat>> out;
    for (const auto& entry : manifest["tensors"]) {
        if (!entry.contains("name") || !entry.contains("rows") || !entry.contains("cols"))
            throw IngestError(path, "manifest entry lacks name/rows/cols");
        Mat m(entry["rows"].get<size_t>(), entry["cols"].get<size_t>());
        for (double& v : m.a) {
            unsigned char bytes[8];
            in.read(reinterpret_cast<char*>(bytes), 8);
            if (!in) throw IngestError(path, "truncated value payload");
            uint64_t bits = 0;
            for (int k = 0; k < 8; ++k) bits |= (uint64_t)bytes[k] << (8 * k);
            std::memcpy(&v, &bits, sizeof v);
        }
        out.emplace_back(entry["name"].get<std::string>(), std::move(m));
    }
    return out;
}

}  // namespace patchgt
