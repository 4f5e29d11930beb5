#include "patchgt/spectral.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "patchgt/errors.hpp"

namespace patchgt {

Mat normalized_laplacian(const Graph& g) {
    g.validate();
    const int n = g.num_nodes;
    if (n == 0) throw ContractError("normalized_laplacian: empty graph");
    std::vector<double> degree(n, 0.0);
    for (auto [u, v] : g.edges) {
        degree[u] += 1.0;
        degree[v] += 1.0;
    }
    std::vector<double> dinv_sqrt(n, 0.0);
    for (int i = 0; i < n; ++i)
        if (degree[i] > 0.0) dinv_sqrt[i] = 1.0 / std::sqrt(degree[i]);
    Mat l = Mat::identity(n);
    for (auto [u, v] : g.edges) {
        const double w = dinv_sqrt[u] * dinv_sqrt[v];
        l.at(u, v) -= w;
        l.at(v, u) -= w;
    }
    return l;
}

namespace {

double max_off_diagonal(const Mat& a) {
    double worst = 0.0;
    for (size_t p = 0; p + 1 < a.rows; ++p)
        for (size_t q = p + 1; q < a.cols; ++q)
            worst = std::max(worst, std::fabs(a.at(p, q)));
    return worst;
}

// One cyclic sweep of Jacobi rotations in fixed (p,q) row-major order.
void jacobi_sweep(Mat& a, Mat& v) {
    const size_t n = a.rows;
    for (size_t p = 0; p + 1 < n; ++p) {
        for (size_t q = p + 1; q < n; ++q) {
            const double apq = a.at(p, q);
            if (apq == 0.0) continue;
            const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
            double t;
            if (std::fabs(theta) > 1e150) {
                t = 1.0 / (2.0 * theta);  // theta^2 would overflow
            } else {
                t = 1.0 / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                if (theta < 0.0) t = -t;
            }
            const double c = 1.0 / std::sqrt(t * t + 1.0);
            const double s = t * c;
            const double tau = s / (1.0 + c);
            const double app = a.at(p, p), aqq = a.at(q, q);
            a.at(p, p) = app - t * apq;
            a.at(q, q) = aqq + t * apq;
            a.at(p, q) = 0.0;
            a.at(q, p) = 0.0;
            for (size_t i = 0; i < n; ++i) {
                if (i == p || i == q) continue;
                const double aip = a.at(i, p), aiq = a.at(i, q);
                a.at(i, p) = aip - s * (aiq + tau * aip);
                a.at(i, q) = aiq + s * (aip - tau * aiq);
                a.at(p, i) = a.at(i, p);
                a.at(q, i) = a.at(i, q);
            }
            for (size_t i = 0; i < n; ++i) {
                const double vip = v.at(i, p), viq = v.at(i, q);
                v.at(i, p) = vip - s * (viq + tau * vip);
                v.at(i, q) = viq + s * (vip - tau * viq);
            }
        }
    }
}

// Flip each column so its first odd moment that clears the threshold is
// positive. Makes embeddings comparable across runs that agree up to column
// sign (the generic ambiguity of a simple eigenvalue).
void canonicalize_column_signs(Mat& u) {
    for (size_t j = 0; j < u.cols; ++j) {
        double decided = 0.0;
        for (int power : {1, 3, 5}) {
            double m = 0.0;
            for (size_t i = 0; i < u.rows; ++i) {
                double x = u.at(i, j);
                double term = x;
                for (int rep = 1; rep < power; ++rep) term *= x;
                m += term;
            }
            if (std::fabs(m) > 1e-7) {
                decided = m;
                break;
            }
        }
        if (decided < 0.0)
            for (size_t i = 0; i < u.rows; ++i) u.at(i, j) = -u.at(i, j);
    }
}

}  // namespace

SpectralDecomposition eigendecompose(const Mat& laplacian) {
    const size_t n = laplacian.rows;
    if (n == 0 || laplacian.cols != n)
        throw ContractError("eigendecompose: matrix must be square and non-empty");
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j)
            if (std::fabs(laplacian.at(i, j) - laplacian.at(j, i)) > 1e-10)
                throw ContractError("eigendecompose: input is not symmetric");

    Mat a = laplacian;
    Mat v = Mat::identity(n);
    bool converged = false;
    for (int sweep = 0; sweep < 100; ++sweep) {
        if (max_off_diagonal(a) < 1e-12) {
            converged = true;
            break;
        }
        jacobi_sweep(a, v);
    }
    if (!converged && max_off_diagonal(a) >= 1e-12)
        throw NumericError("eigendecompose: no convergence after 100 sweeps (residual " +
                           std::to_string(max_off_diagonal(a)) + ")");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t x, size_t y) { return a.at(x, x) < a.at(y, y); });

    SpectralDecomposition out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Mat(n, n);
    for (size_t j = 0; j < n; ++j) {
        double lambda = a.at(order[j], order[j]);
        if (lambda < 0.0) {
            if (lambda < -1e-10)
                throw NumericError("eigendecompose: eigenvalue " + std::to_string(lambda) +
                                   " below 0; input is not a normalized Laplacian");
            lambda = 0.0;
        } else if (lambda > 2.0) {
            if (lambda > 2.0 + 1e-10)
                throw NumericError("eigendecompose: eigenvalue " + std::to_string(lambda) +
                                   " above 2; input is not a normalized Laplacian");
            lambda = 2.0;
        }
        out.eigenvalues[j] = lambda;
        for (size_t i = 0; i < n; ++i) out.eigenvectors.at(i, j) = v.at(i, order[j]);
    }
    canonicalize_column_signs(out.eigenvectors);
    return out;
}

int select_k(const std::vector<double>& eigenvalues, double gamma) {
    int k = 0;
    for (double lambda : eigenvalues) {
        if (lambda <= gamma + 1e-10)
            ++k;
        else
            break;  // ascending order
    }
    return std::max(k, 1);
}

namespace {

// Row helpers for the value-only (never index-based) tie-breaking rules.
struct RowRef {
    const Mat* m;
    size_t i;
    double at(size_t j) const { return m->at(i, j); }
};

bool row_less(const Mat& m, size_t a, size_t b) {
    for (size_t j = 0; j < m.cols; ++j) {
        if (m.at(a, j) < m.at(b, j)) return true;
        if (m.at(a, j) > m.at(b, j)) return false;
    }
    return false;
}

double sq_dist_rows(const Mat& m, size_t a, size_t b) {
    double s = 0.0;
    for (size_t j = 0; j < m.cols; ++j) {
        const double d = m.at(a, j) - m.at(b, j);
        s += d * d;
    }
    return s;
}

double sq_dist_to_vec(const Mat& m, size_t a, const std::vector<double>& v) {
    double s = 0.0;
    for (size_t j = 0; j < m.cols; ++j) {
        const double d = m.at(a, j) - v[j];
        s += d * d;
    }
    return s;
}

// Cluster members sorted by row content, so sums do not depend on input order.
std::vector<size_t> sorted_members(const Mat& pts, const std::vector<int>& assign,
                                   int cluster) {
    std::vector<size_t> members;
    for (size_t i = 0; i < assign.size(); ++i)
        if (assign[i] == cluster) members.push_back(i);
    std::sort(members.begin(), members.end(),
              [&](size_t a, size_t b) { return row_less(pts, a, b); });
    return members;
}

}  // namespace

KMeansResult kmeans(const Mat& points, int k) {
    const size_t n = points.rows;
    const size_t dim = points.cols;
    if (k < 1) throw ContractError("kmeans: k must be >= 1");
    if ((size_t)k > n)
        throw ContractError("kmeans: k = " + std::to_string(k) + " exceeds " +
                            std::to_string(n) + " points");

    KMeansResult out;
    out.assignment.assign(n, 0);
    out.k = 1;
    if (k == 1) return out;

    bool all_identical = true;
    for (size_t i = 1; i < n && all_identical; ++i)
        all_identical = !row_less(points, 0, i) && !row_less(points, i, 0);
    if (all_identical) {
        out.degenerate_fallback = true;
        return out;
    }

    // Farthest-point seeding, ties broken on coordinates.
    std::vector<size_t> seeds;
    size_t first = 0;
    for (size_t i = 1; i < n; ++i)
        if (row_less(points, i, first)) first = i;
    seeds.push_back(first);
    std::vector<double> min_d(n);
    for (size_t i = 0; i < n; ++i) min_d[i] = sq_dist_rows(points, i, first);
    while ((int)seeds.size() < k) {
        size_t best = 0;
        bool have = false;
        for (size_t i = 0; i < n; ++i) {
            if (!have || min_d[i] > min_d[best] ||
                (min_d[i] == min_d[best] && row_less(points, i, best))) {
                best = i;
                have = true;
            }
        }
        seeds.push_back(best);
        for (size_t i = 0; i < n; ++i)
            min_d[i] = std::min(min_d[i], sq_dist_rows(points, i, best));
    }

    std::vector<std::vector<double>> centroids(k, std::vector<double>(dim));
    for (int c = 0; c < k; ++c)
        for (size_t j = 0; j < dim; ++j) centroids[c][j] = points.at(seeds[c], j);

    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < 300; ++iter) {
        // Assign to the nearest centroid, ties to the lowest cluster id.
        std::vector<int> next(n);
        for (size_t i = 0; i < n; ++i) {
            int best_c = 0;
            double best_d = sq_dist_to_vec(points, i, centroids[0]);
            for (int c = 1; c < k; ++c) {
                const double d = sq_dist_to_vec(points, i, centroids[c]);
                if (d < best_d) {
                    best_d = d;
                    best_c = c;
                }
            }
            next[i] = best_c;
        }

        // Repair empty clusters by splitting the most scattered cluster.
        for (;;) {
            std::vector<int> counts(k, 0);
            for (int c : next) ++counts[c];
            int empty = -1;
            for (int c = 0; c < k; ++c)
                if (counts[c] == 0) {
                    empty = c;
                    break;
                }
            if (empty < 0) break;

            int donor = -1;
            double donor_wcss = -1.0;
            std::vector<double> donor_centroid;
            for (int c = 0; c < k; ++c) {
                if (counts[c] < 2) continue;
                auto members = sorted_members(points, next, c);
                std::vector<double> mu(dim, 0.0);
                for (size_t i : members)
                    for (size_t j = 0; j < dim; ++j) mu[j] += points.at(i, j);
                for (size_t j = 0; j < dim; ++j) mu[j] /= (double)members.size();
                double wcss = 0.0;
                for (size_t i : members) wcss += sq_dist_to_vec(points, i, mu);
                const bool better =
                    wcss > donor_wcss ||
                    (wcss == donor_wcss && counts[c] > (donor >= 0 ? counts[donor] : -1));
                if (better) {
                    donor = c;
                    donor_wcss = wcss;
                    donor_centroid = mu;
                }
            }
            if (donor < 0 || donor_wcss == 0.0) break;  // nothing splittable

            auto members = sorted_members(points, next, donor);
            size_t far = members[0];
            double far_d = sq_dist_to_vec(points, far, donor_centroid);
            for (size_t i : members) {
                const double d = sq_dist_to_vec(points, i, donor_centroid);
                if (d > far_d || (d == far_d && row_less(points, far, i))) {
                    far = i;
                    far_d = d;
                }
            }
            next[far] = empty;
        }

        const bool stable = (next == assign);
        assign = next;
        if (stable) break;

        for (int c = 0; c < k; ++c) {
            auto members = sorted_members(points, assign, c);
            if (members.empty()) continue;  // unsplittable duplicates; compacted below
            std::vector<double> mu(dim, 0.0);
            for (size_t i : members)
                for (size_t j = 0; j < dim; ++j) mu[j] += points.at(i, j);
            for (size_t j = 0; j < dim; ++j) mu[j] /= (double)members.size();
            centroids[c] = mu;
        }
    }

    // Lloyd's parks symmetric inputs in poor local minima (a hexagon of
    // points splits 2+3+1 instead of into pairs). Refine by moving one point
    // at a time while the within-cluster scatter strictly drops. Scan order
    // and tie-breaks are row-value based, so the result still depends only on
    // the row multiset.
    {
        std::vector<int> counts(k, 0);
        for (int c : assign) ++counts[c];
        auto refresh = [&](int c) {
            auto members = sorted_members(points, assign, c);
            if (members.empty()) return;
            std::vector<double> mu(dim, 0.0);
            for (size_t i : members)
                for (size_t j = 0; j < dim; ++j) mu[j] += points.at(i, j);
            for (size_t j = 0; j < dim; ++j) mu[j] /= (double)members.size();
            centroids[c] = mu;
        };
        for (int c = 0; c < k; ++c) refresh(c);

        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](size_t a, size_t b) { return row_less(points, a, b); });

        const double tol = 1e-12;
        size_t moves = 0;
        const size_t cap = 100 * n;
        bool improved = true;
        while (improved && moves < cap) {
            improved = false;
            for (size_t idx : order) {
                const int from = assign[idx];
                if (counts[from] <= 1) continue;
                const double na = (double)counts[from];
                const double removal =
                    sq_dist_to_vec(points, idx, centroids[from]) * na / (na - 1.0);
                int best_c = -1;
                double best_gain = tol;
                for (int c = 0; c < k; ++c) {
                    if (c == from || counts[c] == 0) continue;
                    const double nb = (double)counts[c];
                    const double gain =
                        removal -
                        sq_dist_to_vec(points, idx, centroids[c]) * nb / (nb + 1.0);
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_c = c;
                    }
                }
                if (best_c >= 0) {
                    assign[idx] = best_c;
                    --counts[from];
                    ++counts[best_c];
                    refresh(from);
                    refresh(best_c);
                    ++moves;
                    improved = true;
                    break;
                }
            }
        }
    }

    // Compact ids in case duplicate-heavy input left a cluster empty.
    std::vector<int> remap(k, -1);
    int used = 0;
    std::vector<int> counts(k, 0);
    for (int c : assign) ++counts[c];
    for (int c = 0; c < k; ++c)
        if (counts[c] > 0) remap[c] = used++;
    out.assignment.resize(n);
    for (size_t i = 0; i < n; ++i) out.assignment[i] = remap[assign[i]];
    out.k = used;
    return out;
}

PatchPartition segment(const Graph& g, double gamma) {
    if (!(gamma >= 0.0 && gamma <= 2.0))
        throw ContractError("segment: gamma must lie in [0, 2]");
    const Mat l = normalized_laplacian(g);
    const SpectralDecomposition eig = eigendecompose(l);
    const int k = select_k(eig.eigenvalues, gamma);

    Mat embedding((size_t)g.num_nodes, (size_t)k);
    for (int i = 0; i < g.num_nodes; ++i)
        for (int j = 0; j < k; ++j) embedding.at(i, j) = eig.eigenvectors.at(i, j);

    const KMeansResult km = kmeans(embedding, k);
    PatchPartition part;
    part.assignment = km.assignment;
    part.k = km.k;
    part.gamma = gamma;
    part.degenerate_fallback = km.degenerate_fallback;
    part.patch_sizes.assign(part.k, 0);
    for (int c : part.assignment) ++part.patch_sizes[c];
    return part;
}

Mat coarse_graph(const Graph& g, const PatchPartition& partition) {
    if ((int)partition.assignment.size() != g.num_nodes)
        throw ContractError("coarse_graph: partition does not cover the graph");
    Mat coarse((size_t)partition.k, (size_t)partition.k);
    for (auto [u, v] : g.edges) {
        const int a = partition.assignment[u];
        const int b = partition.assignment[v];
        coarse.at(a, b) = 1.0;
        coarse.at(b, a) = 1.0;
    }
    return coarse;
}

using nlohmann::json;

std::vector<SegmentationRecord> load_segmentation_cache(const std::string& path) {
    std::ifstream in(path);
    if (!in) return {};
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw IngestError(path, std::string("invalid cache JSON: ") + e.what());
    }
    std::vector<SegmentationRecord> out;
    for (const auto& jr : doc) {
        SegmentationRecord r;
        r.graph_digest = jr.at("graph_digest").get<std::string>();
        r.gamma = jr.at("gamma").get<double>();
        r.assignment = jr.at("assignment").get<std::vector<int>>();
        r.k = jr.at("k").get<int>();
        out.push_back(std::move(r));
    }
    return out;
}

void save_segmentation_cache(const std::vector<SegmentationRecord>& records,
                             const std::string& path) {
    json doc = json::array();
    for (const auto& r : records) {
        json jr;
        jr["graph_digest"] = r.graph_digest;
        jr["gamma"] = r.gamma;
        jr["assignment"] = r.assignment;
        jr["k"] = r.k;
        doc.push_back(std::move(jr));
    }
    std::ofstream out(path);
    if (!out) throw IngestError(path, "cannot open for writing");
    out << doc.dump(1) << "\n";
}

std::vector<PatchPartition> segment_dataset(const Dataset& ds, double gamma,
                                            const std::string& cache_path, int jobs) {
    if (jobs < 1) throw ConfigError("segment_dataset: jobs must be >= 1");
    const size_t n = ds.graphs.size();
    std::vector<PatchPartition> parts(n);
    std::vector<char> done(n, 0);

    std::map<std::pair<std::string, double>, SegmentationRecord> cache;
    std::vector<std::string> digests(n);
    for (size_t i = 0; i < n; ++i) digests[i] = graph_digest(ds.graphs[i]);
    if (!cache_path.empty()) {
        for (auto& r : load_segmentation_cache(cache_path))
            cache[{r.graph_digest, r.gamma}] = r;
        for (size_t i = 0; i < n; ++i) {
            auto it = cache.find({digests[i], gamma});
            if (it == cache.end()) continue;
            PatchPartition p;
            p.assignment = it->second.assignment;
            p.k = it->second.k;
            p.gamma = gamma;
            p.patch_sizes.assign(p.k, 0);
            for (int c : p.assignment) ++p.patch_sizes[c];
            parts[i] = std::move(p);
            done[i] = 1;
        }
    }

    std::vector<size_t> todo;
    for (size_t i = 0; i < n; ++i)
        if (!done[i]) todo.push_back(i);

    const int workers = std::min<int>(jobs, (int)std::max<size_t>(todo.size(), 1));
    std::vector<std::thread> pool;
    std::atomic<size_t> cursor{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto work = [&] {
        for (;;) {
            const size_t slot = cursor.fetch_add(1);
            if (slot >= todo.size()) return;
            try {
                parts[todo[slot]] = segment(ds.graphs[todo[slot]], gamma);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    if (!cache_path.empty() && !todo.empty()) {
        for (size_t i : todo) {
            SegmentationRecord r;
            r.graph_digest = digests[i];
            r.gamma = gamma;
            r.assignment = parts[i].assignment;
            r.k = parts[i].k;
            cache[{r.graph_digest, r.gamma}] = std::move(r);
        }
        std::vector<SegmentationRecord> all;
        all.reserve(cache.size());
        for (auto& [key, r] : cache) all.push_back(r);
        save_segmentation_cache(all, cache_path);
    }
    return parts;
}

}  // namespace patchgt
