#pragma once

#include <array>
#include <cmath>

namespace qmcfem::quadrature {

/// Barycentric node and weight normalised so that weights sum to one.
struct TriangleNode {
  std::array<double, 3> bary;
  double weight;
};

// Symmetric 6-point rule, exact for polynomials of degree 4.
inline constexpr std::array<TriangleNode, 6> triangle_degree4{{
    {{0.108103018168070, 0.445948490915965, 0.445948490915965}, 0.223381589678011},
    {{0.445948490915965, 0.108103018168070, 0.445948490915965}, 0.223381589678011},
    {{0.445948490915965, 0.445948490915965, 0.108103018168070}, 0.223381589678011},
    {{0.816847572980459, 0.091576213509771, 0.091576213509771}, 0.109951743655322},
    {{0.091576213509771, 0.816847572980459, 0.091576213509771}, 0.109951743655322},
    {{0.091576213509771, 0.091576213509771, 0.816847572980459}, 0.109951743655322},
}};

/// Node on [0,1] and weight summing to one.
struct LineNode {
  double t;
  double weight;
};

// 3-point Gauss-Legendre on [0,1], exact for degree 5.
inline const std::array<LineNode, 3> gauss3{{
    {0.5 - 0.5 * std::sqrt(0.6), 5.0 / 18.0},
    {0.5, 8.0 / 18.0},
    {0.5 + 0.5 * std::sqrt(0.6), 5.0 / 18.0},
}};

}  // namespace qmcfem::quadrature
