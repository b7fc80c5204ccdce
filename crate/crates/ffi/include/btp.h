/* C interface to the Brownian-time kernel library. */

#ifndef BTP_H
#define BTP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes for every C-ABI call.
 */
typedef enum BtpStatus {
  BtpStatus_Ok = 0,
  BtpStatus_NullPointer = 1,
  BtpStatus_InvalidArgument = 2,
  BtpStatus_DomainError = 3,
  BtpStatus_ConvergenceError = 4,
  BtpStatus_InternalError = 5,
} BtpStatus;

/**
 * Opaque quadrature handle.
 */
typedef struct BtpQuadrature BtpQuadrature;

/**
 * Create a quadrature handle; returns null on invalid parameters.
 */
struct BtpQuadrature *btp_quadrature_new(uintptr_t node_count, double tail_cutoff, double rel_tol);

/**
 * Default quadrature (40 nodes per panel, cutoff 8, rel_tol 1e-8).
 */
struct BtpQuadrature *btp_quadrature_default(void);

/**
 * Free a quadrature handle; null is ignored.
 */
void btp_quadrature_free(struct BtpQuadrature *q);

/**
 * Library version as a static C string.
 */
const char *btp_version(void);

/**
 * Gaussian heat kernel `(2πt)^{-d/2} exp(-|x-y|²/2t)`.
 *
 * # Safety
 * `x` and `y` must point to `d` doubles; `out` must be a valid pointer.
 */
enum BtpStatus btp_bm_kernel(double t, const double *x, const double *y, uintptr_t d, double *out);

/**
 * One-dimensional Gaussian clock weight `e^{-s²/2t}/√(2πt)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum BtpStatus btp_bm_time_weight(double t, double s, double *out);

/**
 * Brownian-time density `2∫ K^{G,d}_s(x,y) K^{G,1}_t(0,s) ds`.
 *
 * # Safety
 * `q` must be a live handle; `x`, `y` point to `d` doubles; `out` valid.
 */
enum BtpStatus btp_btbm_density(const struct BtpQuadrature *q,
                                double t,
                                const double *x,
                                const double *y,
                                uintptr_t d,
                                double *out);

/**
 * 2-clock Brownian-time density at the origin for clock parameters (u, v).
 *
 * # Safety
 * `q` must be a live handle; `out` valid.
 */
enum BtpStatus btp_btbm2_density(const struct BtpQuadrature *q,
                                 double u,
                                 double v,
                                 uintptr_t d,
                                 double *out);

/**
 * Continuous-time walk transition probability on `δℤᵈ`.
 *
 * # Safety
 * `x`, `y` point to `d` site indices; `out` valid.
 */
enum BtpStatus btp_rw_density(double t,
                              const int64_t *x,
                              const int64_t *y,
                              uintptr_t d,
                              double delta,
                              double *out);

/**
 * Brownian-time walk transition probability on `δℤᵈ`.
 *
 * # Safety
 * `q` live handle; `x`, `y` point to `d` site indices; `out` valid.
 */
enum BtpStatus btp_btrw_density(const struct BtpQuadrature *q,
                                double t,
                                const int64_t *x,
                                const int64_t *y,
                                uintptr_t d,
                                double delta,
                                double *out);

/**
 * 2-clock Brownian-time walk probability at site offset `x`.
 *
 * # Safety
 * `q` live handle; `x` points to `d` site indices; `out` valid.
 */
enum BtpStatus btp_btrw2_density(const struct BtpQuadrature *q,
                                 double u,
                                 double v,
                                 const int64_t *x,
                                 uintptr_t d,
                                 double delta,
                                 double *out);

/**
 * Squared-kernel space integral (continuous for `delta <= 0`, lattice sum
 * otherwise). Finite for `1 <= d <= 3` only.
 *
 * # Safety
 * `q` live handle; `out` valid.
 */
enum BtpStatus btp_l2_kernel_norm(const struct BtpQuadrature *q,
                                  double t,
                                  uintptr_t d,
                                  double delta,
                                  double *out);

/**
 * Time-integrated squared temporal kernel difference between horizons
 * `r < t` (continuous for `delta <= 0`).
 *
 * # Safety
 * `q` live handle; `out` valid.
 */
enum BtpStatus btp_temporal_difference_integral(const struct BtpQuadrature *q,
                                                double r,
                                                double t,
                                                uintptr_t d,
                                                double delta,
                                                double *out);

/**
 * Time-integrated squared spatial kernel difference at offset `z`
 * (continuous for `delta <= 0`; lattice offsets must be δ-multiples).
 *
 * # Safety
 * `q` live handle; `z` points to `d` doubles; `out` valid.
 */
enum BtpStatus btp_spatial_difference_integral(const struct BtpQuadrature *q,
                                               const double *z,
                                               double t,
                                               uintptr_t d,
                                               double delta,
                                               double *out);

#endif  /* BTP_H */
