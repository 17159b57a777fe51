#include "mealscan/volumetry/delaunay.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <gmpxx.h>

namespace mealscan::volumetry {

namespace {

// Shewchuk's first-stage error bounds for the straightforward determinant evaluations.
constexpr double kEpsilon = 0x1.0p-53;
constexpr double kOrientBound = (3.0 + 16.0 * kEpsilon) * kEpsilon;
constexpr double kIncircleBound = (10.0 + 96.0 * kEpsilon) * kEpsilon;

int sign(const mpq_class& v) { return sgn(v); }

int orient2d_exact(const Vec2& a, const Vec2& b, const Vec2& c) {
    const mpq_class ax(a[0]), ay(a[1]), bx(b[0]), by(b[1]), cx(c[0]), cy(c[1]);
    return sign((bx - ax) * (cy - ay) - (by - ay) * (cx - ax));
}

int incircle_exact(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
    const mpq_class dx(d[0]), dy(d[1]);
    const mpq_class adx = mpq_class(a[0]) - dx, ady = mpq_class(a[1]) - dy;
    const mpq_class bdx = mpq_class(b[0]) - dx, bdy = mpq_class(b[1]) - dy;
    const mpq_class cdx = mpq_class(c[0]) - dx, cdy = mpq_class(c[1]) - dy;
    const mpq_class alift = adx * adx + ady * ady, blift = bdx * bdx + bdy * bdy, clift = cdx * cdx + cdy * cdy;
    return sign(alift * (bdx * cdy - bdy * cdx) + blift * (cdx * ady - cdy * adx) + clift * (adx * bdy - ady * bdx));
}

}  // namespace

int orient2d(const Vec2& a, const Vec2& b, const Vec2& c) {
    const double left = (a[0] - c[0]) * (b[1] - c[1]);
    const double right = (a[1] - c[1]) * (b[0] - c[0]);
    const double det = left - right;
    const double bound = kOrientBound * (std::abs(left) + std::abs(right));
    if (det > bound) return 1;
    if (-det > bound) return -1;
    return orient2d_exact(a, b, c);
}

int incircle(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
    const double adx = a[0] - d[0], ady = a[1] - d[1];
    const double bdx = b[0] - d[0], bdy = b[1] - d[1];
    const double cdx = c[0] - d[0], cdy = c[1] - d[1];
    const double bdxcdy = bdx * cdy, cdxbdy = cdx * bdy;
    const double cdxady = cdx * ady, adxcdy = adx * cdy;
    const double adxbdy = adx * bdy, bdxady = bdx * ady;
    const double alift = adx * adx + ady * ady;
    const double blift = bdx * bdx + bdy * bdy;
    const double clift = cdx * cdx + cdy * cdy;
    const double det = alift * (bdxcdy - cdxbdy) + blift * (cdxady - adxcdy) + clift * (adxbdy - bdxady);
    const double permanent = (std::abs(bdxcdy) + std::abs(cdxbdy)) * alift +
                             (std::abs(cdxady) + std::abs(adxcdy)) * blift +
                             (std::abs(adxbdy) + std::abs(bdxady)) * clift;
    const double bound = kIncircleBound * permanent;
    if (det > bound) return 1;
    if (-det > bound) return -1;
    return incircle_exact(a, b, c, d);
}

namespace {

constexpr int kGhost = -1;

// Triangles keep vertices counterclockwise; nbr[i] is across the edge opposite v[i].
// A ghost triangle (u, v, kGhost) stands for the outside of hull edge u -> v, the real
// triangle across that edge being (v, u, w).
struct Tri {
    std::array<int, 3> v;
    std::array<int, 3> nbr{-1, -1, -1};
    bool alive = true;
    bool ghost() const { return v[2] == kGhost; }
};

class Triangulator {
public:
    explicit Triangulator(const std::vector<Vec2>& pts) : pts_(pts) {}

    std::vector<Triangle> run() {
        const int n = int(pts_.size());
        if (n < 3) throw Error(ErrorKind::validation, "delaunay triangulation needs at least 3 points");
        int a = 0, b = -1, c = -1;
        for (int i = 1; i < n && b < 0; ++i)
            if (pts_[i] != pts_[a]) b = i;
        if (b >= 0)
            for (int i = b + 1; i < n && c < 0; ++i)
                if (orient2d(pts_[a], pts_[b], pts_[i]) != 0) c = i;
        if (c < 0) throw Error(ErrorKind::validation, "delaunay input is collinear or degenerate");
        if (orient2d(pts_[a], pts_[b], pts_[c]) < 0) std::swap(b, c);
        seed_triangle(a, b, c);
        for (int i = 0; i < n; ++i)
            if (i != a && i != b && i != c) insert(i);
        std::vector<Triangle> out;
        for (const auto& t : tris_)
            if (t.alive && !t.ghost()) out.push_back(t.v);
        return out;
    }

private:
    const std::vector<Vec2>& pts_;
    std::vector<Tri> tris_;
    std::vector<unsigned> mark_;  // == stamp_ for triangles in the current cavity
    unsigned stamp_ = 0;
    int last_ = 0;

    void seed_triangle(int a, int b, int c) {
        tris_.push_back({{a, b, c}});
        tris_.push_back({{b, a, kGhost}});  // outside of edge a -> b
        tris_.push_back({{c, b, kGhost}});
        tris_.push_back({{a, c, kGhost}});
        link_all({0, 1, 2, 3});
        last_ = 0;
    }

    // Pairs up neighbours among the given triangles by matching reversed directed edges.
    void link_all(const std::vector<int>& ids) {
        std::map<std::pair<int, int>, std::pair<int, int>> edges;
        for (int id : ids)
            for (int e = 0; e < 3; ++e) edges[{tris_[id].v[(e + 1) % 3], tris_[id].v[(e + 2) % 3]}] = {id, e};
        for (int id : ids)
            for (int e = 0; e < 3; ++e) {
                auto it = edges.find({tris_[id].v[(e + 2) % 3], tris_[id].v[(e + 1) % 3]});
                if (it != edges.end()) tris_[id].nbr[e] = it->second.first;
            }
    }

    bool in_conflict(const Tri& t, const Vec2& p) const {
        if (!t.ghost()) return incircle(pts_[t.v[0]], pts_[t.v[1]], pts_[t.v[2]], p) > 0;
        const Vec2& u = pts_[t.v[0]];
        const Vec2& v = pts_[t.v[1]];
        const int o = orient2d(u, v, p);
        if (o != 0) return o > 0;
        // Collinear with the hull edge: conflicting only strictly inside the segment.
        const double t_along = (p[0] - u[0]) * (v[0] - u[0]) + (p[1] - u[1]) * (v[1] - u[1]);
        const double len2 = (v[0] - u[0]) * (v[0] - u[0]) + (v[1] - u[1]) * (v[1] - u[1]);
        return t_along > 0 && t_along < len2;
    }

    // Visibility walk from the last created triangle to one in conflict with p. Returns -1 for a duplicate.
    int locate(const Vec2& p) {
        int cur = last_;
        if (!tris_[cur].alive || tris_[cur].ghost()) cur = first_real();
        const std::size_t limit = 4 * tris_.size() + 16;
        for (std::size_t step = 0; step < limit; ++step) {
            const Tri& t = tris_[cur];
            if (t.ghost()) return cur;
            int next = -1;
            for (int e = 0; e < 3 && next < 0; ++e) {
                const int k = (e + int(step)) % 3;
                if (orient2d(pts_[t.v[(k + 1) % 3]], pts_[t.v[(k + 2) % 3]], p) < 0) next = t.nbr[k];
            }
            if (next < 0) {
                for (int k = 0; k < 3; ++k)
                    if (pts_[t.v[k]] == p) return -1;
                return cur;
            }
            cur = next;
        }
        for (std::size_t i = 0; i < tris_.size(); ++i) {
            const Tri& t = tris_[i];
            if (!t.alive) continue;
            for (int k = 0; k < 3; ++k)
                if (t.v[k] != kGhost && pts_[t.v[k]] == p) return -1;
        }
        for (std::size_t i = 0; i < tris_.size(); ++i)
            if (tris_[i].alive && in_conflict(tris_[i], p)) return int(i);
        throw Error(ErrorKind::validation, "delaunay point location failed");
    }

    int first_real() const {
        for (std::size_t i = 0; i < tris_.size(); ++i)
            if (tris_[i].alive && !tris_[i].ghost()) return int(i);
        return 0;
    }

    void insert(int pi) {
        const Vec2& p = pts_[pi];
        const int start = locate(p);
        if (start < 0) return;
        if (!tris_[start].ghost()) {
            for (int k = 0; k < 3; ++k)
                if (pts_[tris_[start].v[k]] == p) return;
        }

        ++stamp_;
        mark_.resize(tris_.size(), 0);
        auto in_cavity = [&](int id) { return mark_[std::size_t(id)] == stamp_; };
        std::vector<int> cavity{start};
        mark_[std::size_t(start)] = stamp_;
        struct Boundary {
            int a, b, outside;
        };
        std::vector<Boundary> boundary;
        for (std::size_t q = 0; q < cavity.size(); ++q) {
            const Tri t = tris_[cavity[q]];
            for (int e = 0; e < 3; ++e) {
                const int nb = t.nbr[e];
                if (in_cavity(nb)) continue;
                if (in_conflict(tris_[nb], p)) {
                    mark_[std::size_t(nb)] = stamp_;
                    cavity.push_back(nb);
                } else {
                    boundary.push_back({t.v[(e + 1) % 3], t.v[(e + 2) % 3], nb});
                }
            }
        }
        // Boundary edges reached before their triangle joined the cavity are stale.
        std::erase_if(boundary, [&](const Boundary& b) { return in_cavity(b.outside); });
        for (int id : cavity) tris_[id].alive = false;

        std::vector<int> created;
        for (const auto& bd : boundary) {
            std::array<int, 3> v{bd.a, bd.b, pi};
            if (v[0] == kGhost) v = {v[1], v[2], kGhost};
            else if (v[1] == kGhost) v = {v[2], v[0], kGhost};
            const int id = int(tris_.size());
            tris_.push_back({v});
            created.push_back(id);
            // Attach to the outside triangle across (a, b).
            Tri& out = tris_[bd.outside];
            for (int e = 0; e < 3; ++e)
                if (out.v[(e + 1) % 3] == bd.b && out.v[(e + 2) % 3] == bd.a) out.nbr[e] = id;
            for (int e = 0; e < 3; ++e)
                if (v[(e + 1) % 3] == bd.a && v[(e + 2) % 3] == bd.b) tris_[id].nbr[e] = bd.outside;
        }
        link_new(created);
        for (int id : created)
            if (!tris_[id].ghost()) last_ = id;
    }

    // Links the fan around the new point: edges shared between two created triangles.
    void link_new(const std::vector<int>& ids) {
        std::map<std::pair<int, int>, int> edges;
        for (int id : ids)
            for (int e = 0; e < 3; ++e) edges[{tris_[id].v[(e + 1) % 3], tris_[id].v[(e + 2) % 3]}] = id;
        for (int id : ids)
            for (int e = 0; e < 3; ++e) {
                if (tris_[id].nbr[e] >= 0) continue;
                auto it = edges.find({tris_[id].v[(e + 2) % 3], tris_[id].v[(e + 1) % 3]});
                if (it != edges.end()) tris_[id].nbr[e] = it->second;
            }
    }
};

}  // namespace

std::vector<Triangle> delaunay_triangulate(const std::vector<Vec2>& points) {
    for (const auto& p : points)
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]))
            throw Error(ErrorKind::validation, "delaunay input has non-finite coordinates");
    return Triangulator(points).run();
}

}  // namespace mealscan::volumetry
