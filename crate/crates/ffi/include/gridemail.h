#ifndef GRIDEMAIL_H
#define GRIDEMAIL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every exported call.
 */
typedef enum {
  GE_STATUS_OK = 0,
  GE_STATUS_NULL_ARGUMENT = 1,
  GE_STATUS_INVALID_UTF8 = 2,
  GE_STATUS_INVALID_ARGUMENT = 3,
  GE_STATUS_CONFIG = 4,
  GE_STATUS_SIMULATION = 5,
  GE_STATUS_PROTOCOL = 6,
  /**
   * The token is unknown or does not cover the required amount.
   */
  GE_STATUS_PAYMENT_REQUIRED = 7,
  /**
   * The token was already redeemed or refunded.
   */
  GE_STATUS_DUPLICATE_TOKEN = 8,
  GE_STATUS_STORAGE = 9,
  GE_STATUS_PANIC = 10,
} GeStatus;

typedef enum {
  GE_OUTCOME_ACCEPT = 0,
  GE_OUTCOME_REJECT = 1,
  GE_OUTCOME_NEEDS_PAYMENT = 2,
} GeOutcome;

typedef enum {
  GE_REASON_ACCEPT_ALL = 0,
  GE_REASON_WITHIN_TIME_CAP = 1,
  GE_REASON_TIME_CAP_EXCEEDED = 2,
  GE_REASON_PAYMENT_SUFFICIENT = 3,
  GE_REASON_PAYMENT_REQUIRED = 4,
  GE_REASON_WITHIN_EXCLUSIVE_BUDGET = 5,
  GE_REASON_POSITIVE_EXPECTED_UTILITY = 6,
  GE_REASON_NEGATIVE_EXPECTED_UTILITY = 7,
} GeReason;

/**
 * Opaque decoded protocol frame.
 */
typedef struct GeFrame GeFrame;

/**
 * Opaque payment token ledger.
 */
typedef struct GeLedger GeLedger;

/**
 * Opaque pricing policy together with its running state.
 */
typedef struct GePolicy GePolicy;

/**
 * Opaque simulation configuration.
 */
typedef struct GeSimConfig GeSimConfig;

/**
 * Byte buffer owned by the library.
 */
typedef struct {
  uint8_t *data;
  size_t len;
} GeBytes;

typedef struct {
  double messages_arrived;
  double accepted;
  double rejected;
  double total_read_minutes;
  double gross_benefit;
  double opportunity_cost;
  double net_benefit;
  double payments_collected;
} GeMetrics;

/**
 * Means and standard errors over the replications of one run.
 */
typedef struct {
  uint64_t replications;
  GeMetrics mean;
  GeMetrics se;
} GeSimResult;

typedef struct {
  GeOutcome outcome;
  GeReason reason;
  /**
   * Price the sender must pay; meaningful for `NeedsPayment`.
   */
  double required_payment;
} GeDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or an empty string.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *ge_last_error_message(void);

/**
 * Releases a string returned by the library.
 */
void ge_string_free(char *s);

/**
 * Releases a buffer returned by the library and clears it.
 */
void ge_bytes_free(GeBytes *b);

/**
 * Default configuration with the given arrival rate per minute.
 */
GeStatus ge_sim_config_new(double lambda_per_min,
                           uint64_t seed,
                           uint64_t replications,
                           GeSimConfig **out);

/**
 * Configuration from a JSON document; absent fields take defaults.
 */
GeStatus ge_sim_config_from_json(const char *json, GeSimConfig **out);

void ge_sim_config_free(GeSimConfig *cfg);

/**
 * Runs the configured replications under the named policy
 * (`accept_all`, `time_cap`, `fixed_price`, ...).
 */
GeStatus ge_simulate(const GeSimConfig *cfg, const char *policy, GeSimResult *out);

/**
 * Closed-form net benefit for `accept_all` or `time_cap`.
 */
GeStatus ge_analytic_net_benefit(const GeSimConfig *cfg, const char *policy, double *out);

/**
 * Policy of the given kind with default parameters.
 */
GeStatus ge_policy_new(const char *kind, GePolicy **out);

/**
 * Policy from a JSON configuration document.
 */
GeStatus ge_policy_from_json(const char *json, GePolicy **out);

void ge_policy_free(GePolicy *p);

/**
 * Decides on one offered message without changing the policy state.
 */
GeStatus ge_policy_decide(const GePolicy *p,
                          double predicted_minutes,
                          double predicted_benefit,
                          double offered_payment,
                          GeDecision *out);

/**
 * Records an accepted message of `predicted_minutes` in the policy state.
 */
GeStatus ge_policy_commit(GePolicy *p, double predicted_minutes);

/**
 * Price the policy currently quotes.
 */
GeStatus ge_policy_quote(const GePolicy *p, double *out);

/**
 * Ledger kept only in memory.
 */
GeStatus ge_ledger_new_in_memory(GeLedger **out);

/**
 * Ledger backed by an append-only log at `path`, replayed on open.
 */
GeStatus ge_ledger_open(const char *path, GeLedger **out);

void ge_ledger_free(GeLedger *l);

/**
 * Issues a token worth `amount`. The token string is written to
 * `out_token` and must be released with [`ge_string_free`].
 */
GeStatus ge_ledger_issue(const GeLedger *l, const char *payer, double amount, char **out_token);

/**
 * Redeems a token covering `required`; its face amount goes to `out_amount`.
 */
GeStatus ge_ledger_redeem(const GeLedger *l,
                          const char *token,
                          double required,
                          const char *payee,
                          double *out_amount);

/**
 * Returns a redeemed token to its payer.
 */
GeStatus ge_ledger_refund(const GeLedger *l, const char *token);

/**
 * Decodes exactly one wire frame (line plus any DATA body).
 */
GeStatus ge_frame_decode(const uint8_t *data, size_t len, GeFrame **out);

/**
 * A REJECTED frame with the given response code.
 */
GeStatus ge_frame_new_rejected(uint16_t code, const char *reason, GeFrame **out);

void ge_frame_free(GeFrame *f);

/**
 * The frame's verb, such as `QUOTE`. Release with [`ge_string_free`].
 */
GeStatus ge_frame_verb(const GeFrame *f, char **out);

/**
 * Response code of a REJECTED frame; `InvalidArgument` for other verbs.
 */
GeStatus ge_frame_code(const GeFrame *f, uint16_t *out);

/**
 * Wire encoding of the frame. Release with [`ge_bytes_free`].
 */
GeStatus ge_frame_encode(const GeFrame *f, GeBytes *out);

/**
 * Short description of a response code. Release with [`ge_string_free`].
 */
GeStatus ge_response_code_describe(uint16_t code, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDEMAIL_H */
