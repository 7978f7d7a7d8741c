#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "homlab/errors.hpp"

namespace homlab {

/// Rank-4 elasticity tensor in 2D with minor and major symmetries.
///
/// Voigt convention used throughout: indices (11, 22, 12) with engineering
/// shear, i.e. strain vectors are (e11, e22, 2*e12) and the stored 3x3
/// matrix V satisfies  eta : C eta = eps_eng^T V eps_eng.
class ElasticityTensor4 {
  public:
    ElasticityTensor4() {
        for (auto& a : c_)
            for (auto& b : a)
                for (auto& c : b)
                    for (auto& d : c) d = 0.0;
    }

    double& operator()(int i, int j, int p, int q) { return c_[i][j][p][q]; }
    double operator()(int i, int j, int p, int q) const { return c_[i][j][p][q]; }

    static ElasticityTensor4 isotropic(double lambda, double mu) {
        ElasticityTensor4 t;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int p = 0; p < 2; ++p)
                    for (int q = 0; q < 2; ++q)
                        t.c_[i][j][p][q] = lambda * kd(i, j) * kd(p, q) +
                                           mu * (kd(i, p) * kd(j, q) + kd(i, q) * kd(j, p));
        return t;
    }

    /// The degenerate inclusion part lambda * delta_ij delta_pq: acting on a
    /// strain it produces lambda * tr(e) * I, so the energy is lambda*(div u)^2.
    static ElasticityTensor4 dilatational(double lambda) {
        ElasticityTensor4 t;
        for (int i = 0; i < 2; ++i)
            for (int p = 0; p < 2; ++p) t.c_[i][i][p][p] = lambda;
        return t;
    }

    /// The shear identity part coeff * (delta_ip delta_jq + delta_iq delta_jp);
    /// energy coeff * 2|e|^2. Same as isotropic(0, coeff).
    static ElasticityTensor4 shear_identity(double coeff) { return isotropic(0.0, coeff); }

    static ElasticityTensor4 from_voigt(const Eigen::Matrix3d& v) {
        ElasticityTensor4 t;
        auto set = [&](int i, int j, int p, int q, double val) {
            t.c_[i][j][p][q] = val;
            t.c_[j][i][p][q] = val;
            t.c_[i][j][q][p] = val;
            t.c_[j][i][q][p] = val;
        };
        const int idx[3][2] = {{0, 0}, {1, 1}, {0, 1}};
        for (int I = 0; I < 3; ++I)
            for (int J = 0; J < 3; ++J)
                set(idx[I][0], idx[I][1], idx[J][0], idx[J][1], 0.5 * (v(I, J) + v(J, I)));
        return t;
    }

    Eigen::Matrix3d voigt() const {
        Eigen::Matrix3d v;
        const int idx[3][2] = {{0, 0}, {1, 1}, {0, 1}};
        for (int I = 0; I < 3; ++I)
            for (int J = 0; J < 3; ++J) v(I, J) = c_[idx[I][0]][idx[I][1]][idx[J][0]][idx[J][1]];
        return v;
    }

    ElasticityTensor4& operator+=(const ElasticityTensor4& o) {
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int p = 0; p < 2; ++p)
                    for (int q = 0; q < 2; ++q) c_[i][j][p][q] += o.c_[i][j][p][q];
        return *this;
    }
    ElasticityTensor4& operator*=(double s) {
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int p = 0; p < 2; ++p)
                    for (int q = 0; q < 2; ++q) c_[i][j][p][q] *= s;
        return *this;
    }

    Eigen::Matrix2d apply(const Eigen::Matrix2d& eta) const {
        Eigen::Matrix2d s = Eigen::Matrix2d::Zero();
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int p = 0; p < 2; ++p)
                    for (int q = 0; q < 2; ++q) s(i, j) += c_[i][j][p][q] * eta(p, q);
        return s;
    }

    double symmetry_defect() const {
        double d = 0.0;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int p = 0; p < 2; ++p)
                    for (int q = 0; q < 2; ++q) {
                        d = std::max(d, std::abs(c_[i][j][p][q] - c_[j][i][p][q]));
                        d = std::max(d, std::abs(c_[i][j][p][q] - c_[p][q][i][j]));
                    }
        return d;
    }

    /// Largest nu with eta : C eta >= nu |eta|^2 over symmetric eta, computed
    /// from the Voigt matrix against the tensor-norm Gram matrix.
    double coercivity_constant() const {
        Eigen::Matrix3d n = Eigen::Matrix3d::Identity();
        n(2, 2) = 0.5; // |eta|^2 = e11^2 + e22^2 + 2 e12^2 in engineering coords
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::Matrix3d> es(voigt(), n);
        return es.eigenvalues().minCoeff();
    }

  private:
    static double kd(int a, int b) { return a == b ? 1.0 : 0.0; }
    double c_[2][2][2][2];
};

/// Composite material: positive definite matrix-phase tensor plays C2,
/// the inclusion is isotropic with O(1) bulk and O(eps^2) shear response.
struct MaterialSpec {
    ElasticityTensor4 matrix_tensor = ElasticityTensor4::isotropic(1.0, 1.0);
    double inclusion_lambda = 1.0;
    double inclusion_mu_scale = 0.5;
    double epsilon = 1.0; // symbolic-one for cell problems

    /// Coefficient of the shear-identity tensor (delta_ip delta_jq +
    /// delta_iq delta_jp) scaled so that the default mu-scale of 1/2
    /// reproduces the unit-coefficient inclusion tensor; the limit micro
    /// operator then carries viscosity micro_viscosity().
    double c0_coefficient() const { return 2.0 * inclusion_mu_scale; }
    double micro_viscosity() const { return c0_coefficient(); }

    void validate() const {
        if (inclusion_lambda <= 0.0) throw InvalidValue("inclusion lambda must be positive");
        if (matrix_tensor.symmetry_defect() > 1e-14) throw InvalidValue("matrix tensor must be symmetric");
        if (matrix_tensor.coercivity_constant() <= 0.0) throw InvalidValue("matrix tensor must be positive definite");
    }
};

} // namespace homlab
