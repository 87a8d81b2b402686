#ifndef PROCCHAIN_H
#define PROCCHAIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Bumped on any breaking change to this interface.
#define PROCCHAIN_ABI_VERSION 1

// Result of every interface call.
typedef enum ProcchainStatus {
  PROCCHAIN_STATUS_OK = 0,
  // Null pointer, zero batch size, or an otherwise unusable argument.
  PROCCHAIN_STATUS_INVALID_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  PROCCHAIN_STATUS_INVALID_UTF8 = 2,
  // Definition text or JSON input did not parse.
  PROCCHAIN_STATUS_PARSE_FAILED = 3,
  // Ledger load, verification, or replay failed.
  PROCCHAIN_STATUS_LEDGER_FAILED = 4,
  // Filesystem failure.
  PROCCHAIN_STATUS_IO_FAILED = 5,
  // Asset absent or not readable by the invoker.
  PROCCHAIN_STATUS_NOT_VISIBLE = 6,
  // Invoker is not a registered participant.
  PROCCHAIN_STATUS_UNKNOWN_IDENTITY = 7,
  // The experiment run aborted or was misconfigured.
  PROCCHAIN_STATUS_EXPERIMENT_FAILED = 8,
  // An internal panic was caught; the handle may be inconsistent.
  PROCCHAIN_STATUS_PANIC = 9,
} ProcchainStatus;

// Opaque network handle.
typedef struct ProcchainNetwork ProcchainNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. Valid until the
// next interface call from the same thread; never null.
const char *procchain_last_error_message(void);

uint32_t procchain_abi_version(void);

// Creates an empty network. `definition_text` may be null for the
// built-in order process. On OK the caller owns `*out` and must free it
// with `procchain_network_free`.
//
// Safety: pointer arguments must satisfy the contracts above.
enum ProcchainStatus procchain_network_new(const char *definition_text,
                                           uintptr_t batch_size,
                                           struct ProcchainNetwork **out);

// Loads, verifies, and replays a persisted ledger into a network handle.
//
// Safety: pointer arguments must satisfy the contracts above.
enum ProcchainStatus procchain_network_open(const char *ledger_path,
                                            const char *definition_text,
                                            uintptr_t batch_size,
                                            struct ProcchainNetwork **out);

// Seals pending records and writes the chain to `ledger_path`.
//
// Safety: pointer arguments must satisfy the contracts above.
enum ProcchainStatus procchain_network_save(struct ProcchainNetwork *handle,
                                            const char *ledger_path);

// Releases a handle. Null is a no-op.
//
// Safety: `handle` must come from this interface and not be used
// afterwards.
void procchain_network_free(struct ProcchainNetwork *handle);

// Submits one request, given as the canonical JSON of a transaction
// request. On OK, `*out_outcome_json` holds the verdict as canonical
// JSON (the request may well have been rejected; that is still OK here).
//
// Safety: pointer arguments must satisfy the contracts above.
enum ProcchainStatus procchain_network_submit_json(struct ProcchainNetwork *handle,
                                                   const char *request_json,
                                                   char **out_outcome_json);

// READ-gated asset lookup; on OK, `*out_asset_json` holds the asset as
// canonical JSON.
//
// Safety: pointer arguments must satisfy the contracts above.
enum ProcchainStatus procchain_network_query_asset_json(struct ProcchainNetwork *handle,
                                                        const char *invoker_id,
                                                        const char *asset_id,
                                                        char **out_asset_json);

// Canonical hash of the current world state.
//
// Safety: pointer arguments must satisfy the contracts above.
enum ProcchainStatus procchain_network_state_hash(struct ProcchainNetwork *handle,
                                                  char **out_hash_hex);

// Verifies the sealed chain. OK with `*out_violation` set to null when
// intact; `LedgerFailed` with a description when not.
//
// Safety: pointer arguments must satisfy the contracts above.
enum ProcchainStatus procchain_network_verify(struct ProcchainNetwork *handle,
                                              char **out_violation);

// Runs the seeded experiment described by an experiment-config JSON
// object and returns the report as canonical JSON.
//
// Safety: pointer arguments must satisfy the contracts above.
enum ProcchainStatus procchain_experiment_run_json(const char *config_json, char **out_report_json);

// Releases a string returned by this interface. Null is a no-op.
//
// Safety: `s` must come from this interface and not be used afterwards.
void procchain_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROCCHAIN_H */
