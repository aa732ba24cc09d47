#ifndef ARCHFT_H
#define ARCHFT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum ArchftStatus {
  ARCHFT_STATUS_OK = 0,
  ARCHFT_STATUS_NULL_POINTER = 1,
  ARCHFT_STATUS_INVALID_ARGUMENT = 2,
  ARCHFT_STATUS_CONFIG = 3,
  ARCHFT_STATUS_IO = 4,
  ARCHFT_STATUS_CHECKPOINT = 5,
  ARCHFT_STATUS_PHASE_FAILED = 6,
  ARCHFT_STATUS_FAILED = 7,
  ARCHFT_STATUS_PANIC = 8,
} ArchftStatus;

// Search controller with its own episode stream.
typedef struct ArchftController ArchftController;

// Early-stop tracker over a fixed set of sites.
typedef struct ArchftHistory ArchftHistory;

// A compiled search space.
typedef struct ArchftSpace ArchftSpace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call on the same thread.
const char *archft_last_error(void);

// Library version as a static string.
const char *archft_version(void);

// Compiles a search space. `arch` and `rule` are builtin names or file
// paths; `scope` is `small`, `medium` or `large`.
enum ArchftStatus archft_space_new(const char *arch,
                                   const char *rule,
                                   const char *scope,
                                   struct ArchftSpace **out_space);

void archft_space_free(struct ArchftSpace *space);

enum ArchftStatus archft_space_num_sites(const struct ArchftSpace *space, uintptr_t *out_sites);

enum ArchftStatus archft_space_num_candidates(const struct ArchftSpace *space,
                                              uintptr_t site,
                                              uintptr_t *out_count);

// Writes the kernel size chosen at each site by `actions`.
enum ArchftStatus archft_space_decode(const struct ArchftSpace *space,
                                      const uintptr_t *actions_in,
                                      uintptr_t len,
                                      uintptr_t *out_kernels);

enum ArchftStatus archft_history_new(const struct ArchftSpace *space,
                                     uintptr_t window,
                                     double p_stop,
                                     struct ArchftHistory **out_history);

void archft_history_free(struct ArchftHistory *history);

// Records one round and reports whether the stop rule now holds.
enum ArchftStatus archft_history_record(struct ArchftHistory *history,
                                        const uintptr_t *sampled,
                                        const uintptr_t *greedy,
                                        uintptr_t len,
                                        bool *out_stable);

enum ArchftStatus archft_history_rounds(const struct ArchftHistory *history, uintptr_t *out_rounds);

// Controller with default settings for `space`.
enum ArchftStatus archft_controller_new(const struct ArchftSpace *space,
                                        uint64_t seed,
                                        struct ArchftController **out_controller);

void archft_controller_free(struct ArchftController *controller);

// Samples an episode into `out_actions` and keeps it for the next update.
enum ArchftStatus archft_controller_sample(struct ArchftController *controller,
                                           uintptr_t *out_actions,
                                           uintptr_t len);

enum ArchftStatus archft_controller_greedy(const struct ArchftController *controller,
                                           uintptr_t *out_actions,
                                           uintptr_t len);

// Policy-gradient update on the last sampled episode. `out_advantage` may
// be null.
enum ArchftStatus archft_controller_update(struct ArchftController *controller,
                                           double reward,
                                           double *out_advantage);

// Runs every pending phase in `run_dir`. `config_text` holds
// `key = value` lines and may be null for the defaults.
enum ArchftStatus archft_run_all(const char *config_text, const char *run_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARCHFT_H */
