/* C interface for the algforge workbench.
 *
 * Every function returns a status code:
 *
 *   0  success
 *   1  null pointer, invalid UTF-8, or an unrecognized enum string
 *   2  the model text failed to parse or violated the schema
 *   3  a structural precondition failed (e.g. not almost-Lie)
 *   4  a numeric failure (singular system, non-finite state)
 *   5  internal error
 *
 * Models are opaque handles from alg_model_parse, released with
 * alg_model_free.  Strings returned through out-parameters belong to the
 * caller and must be released with alg_string_free.  The pointer from
 * alg_version is static: do not free it.  Every function that can fail takes
 * a final `char **err_out`; pass NULL to discard the message, otherwise a
 * human-readable description is stored on failure (release it with
 * alg_string_free).
 */

#ifndef ALGFORGE_H
#define ALGFORGE_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#define ALG_OK            0
#define ALG_BAD_ARGUMENT  1
#define ALG_PARSE_ERROR   2
#define ALG_PRECONDITION  3
#define ALG_NUMERIC       4
#define ALG_INTERNAL      5

typedef struct AlgModel AlgModel;

/* Version string of the library.  Static storage: do not free. */
const char *alg_version(void);

/* Parse a model from TOML text into *out. */
int alg_model_parse(const char *text, AlgModel **out, char **err_out);

/* Release a model handle.  NULL is a no-op. */
void alg_model_free(AlgModel *m);

/* Run one structure check: "skew", "al", "lie", "strong", "leibniz", or
 * "jacobi".  On status 0, *pass_out is 1 or 0; when the check fails and
 * witness_out is non-NULL, *witness_out receives the counterexample (or NULL
 * when the check passes).  Randomized probes use a fixed seed. */
int alg_check(const AlgModel *m, const char *which, int *pass_out,
              char **witness_out, char **err_out);

/* Prolong the model's order-1 structure; *out receives model TOML that
 * parses back via alg_model_parse. */
int alg_prolong2_toml(const AlgModel *m, char **out, char **err_out);

/* Render the equations of motion: one "<residual> = 0" line per equation,
 * then "constraint: <poly> = 0" lines.  form may be NULL to use the form
 * recorded in the model, else one of "prolong2", "ep", "ep-position",
 * "standard", "reduced". */
int alg_el_text(const AlgModel *m, const char *form, char **out,
                char **err_out);

/* Integrate from the model's recorded initial data with step h up to t_end;
 * *csv_out receives the trajectory table.  If max_residual_out is non-NULL
 * it receives the largest finite-difference audit residual. */
int alg_integrate_csv(const AlgModel *m, const char *form, double h,
                      double t_end, char **csv_out, double *max_residual_out,
                      char **err_out);

/* Evaluate the model Lie algebra's structure comorphism at a point.  ybar
 * and x are semicolon-separated tuples of comma-separated rationals, e.g.
 * "1,0,0;0,1,0".  k is the order; pass 0 to use the model's order.  *out
 * receives one "ydot<l> = (...)" line per level. */
int alg_kappa_g_eval(const AlgModel *m, int k, const char *ybar,
                     const char *x, char **out, char **err_out);

/* Release a string returned by this library.  NULL is a no-op. */
void alg_string_free(char *s);

#ifdef __cplusplus
}
#endif

#endif /* ALGFORGE_H */
