/*
 * srpmoe — cost-aware recurrent mixture-of-experts routing engine.
 *
 * C interface over the C++ core: opaque handles, integer status codes,
 * JSON-configured operations. Every function returns SRPMOE_OK (0) on
 * success; on failure srpmoe_last_error() describes what went wrong for the
 * calling thread. Strings returned through char** out-parameters are owned
 * by the caller and must be released with srpmoe_string_free().
 */

#ifndef SRPMOE_SRPMOE_H
#define SRPMOE_SRPMOE_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define SRPMOE_API __declspec(dllexport)
#else
#define SRPMOE_API __attribute__((visibility("default")))
#endif

typedef enum srpmoe_status {
  SRPMOE_OK = 0,
  SRPMOE_ERR_CONFIG = 1,   /* invalid or inconsistent configuration */
  SRPMOE_ERR_FORMAT = 2,   /* malformed manifest, checkpoint or data file */
  SRPMOE_ERR_DATA = 3,     /* well-formed file with unusable payload */
  SRPMOE_ERR_RUNTIME = 4,  /* I/O failures, divergence, internal errors */
  SRPMOE_ERR_INVALID_ARGUMENT = 5 /* null handle or pointer misuse */
} srpmoe_status;

typedef struct srpmoe_bank srpmoe_bank;     /* labeled per-expert embeddings */
typedef struct srpmoe_policy srpmoe_policy; /* trained router network */

SRPMOE_API const char* srpmoe_version(void);

/* Thread-local message for the most recent failure in this thread. */
SRPMOE_API const char* srpmoe_last_error(void);

SRPMOE_API void srpmoe_string_free(char* s);

/* ------------------------------------------------------------------------
 * Embedding banks
 *
 * Generation config (JSON):
 *   {"num_train":1600,"num_test":400,"class_separation":1.0,
 *    "latent_noise":1.0,"overfit_gap":1.0,"seed":0,
 *    "experts":[{"id":0,"name":"tsf-b","dim":768,"cost_tflops":0.59,
 *                "fidelity":0.55}, ...]}
 * "experts" may be omitted to use the built-in three-expert setup.
 * ---------------------------------------------------------------------- */

SRPMOE_API int srpmoe_bank_generate(const char* config_json, srpmoe_bank** out_bank);

SRPMOE_API int srpmoe_bank_load(const char* manifest_path, srpmoe_bank** out_bank);

/* Writes manifest.json plus data files into out_dir (created if missing). */
SRPMOE_API int srpmoe_bank_save(const srpmoe_bank* bank, const char* out_dir,
                                char** out_manifest_path);

/* {"num_samples":N,"num_train":...,"num_test":...,"experts":[...]} */
SRPMOE_API int srpmoe_bank_info(const srpmoe_bank* bank, char** out_info_json);

SRPMOE_API void srpmoe_bank_free(srpmoe_bank* bank);

/* ------------------------------------------------------------------------
 * Training
 *
 * Run config (JSON, all keys optional unless noted):
 *   {"agent":"dqn"|"pg","lambda":0.0,"seed":1,"mode":"direct"|"aggregated",
 *    "augment":true,"aug_sigma":0.1,"episodes":50000,"hidden":64,
 *    "router":{"obs_dim":768,"initial_expert":0,"max_steps":0},
 *    "dqn":{"learning_rate":1e-3,"discount":0.99,"epsilon_start":1.0,
 *           "epsilon_end":0.05,"epsilon_decay_fraction":0.4,
 *           "replay_capacity":50000,"batch_size":64,
 *           "target_sync_interval":1000},
 *    "pg":{"learning_rate":1e-3,"clip_ratio":0.2,"epochs":4,
 *          "rollout_episodes":64,"entropy_coef":0.01,"discount":0.99}}
 * out_log_csv receives the training log
 * (episode,mean_reward,train_acc_window,mean_cost_tflops).
 * ---------------------------------------------------------------------- */

SRPMOE_API int srpmoe_train(const srpmoe_bank* bank, const char* run_config_json,
                            srpmoe_policy** out_policy, char** out_log_csv);

SRPMOE_API int srpmoe_policy_save(const srpmoe_policy* policy, const char* path);

SRPMOE_API int srpmoe_policy_load(const char* path, srpmoe_policy** out_policy);

/* {"obs_dim":...,"mode":"direct","head":"dueling","experts":[{"id","dim"}]} */
SRPMOE_API int srpmoe_policy_info(const srpmoe_policy* policy, char** out_info_json);

SRPMOE_API void srpmoe_policy_free(srpmoe_policy* policy);

/* ------------------------------------------------------------------------
 * Evaluation and sweeps
 * ---------------------------------------------------------------------- */

/* eval config: {"split":"test"|"train","initial_expert":0}
 * out_metrics_json: {"accuracy_pct":...,"avg_tflops":...,"num_samples":N}
 * out_assignments_csv: sample_id,x,y,label,pred,experts,cost rows. */
SRPMOE_API int srpmoe_evaluate(const srpmoe_policy* policy, const srpmoe_bank* bank,
                               const char* eval_config_json, char** out_metrics_json,
                               char** out_assignments_csv);

/* sweep config: a run config plus
 *   {"lambdas":[0,0.1,...],"seeds":[1,2,3],"jobs":1,"overfit_bank":false}
 * out_metrics_csv: one row per (lambda, seed) cell. */
SRPMOE_API int srpmoe_sweep(const srpmoe_bank* bank, const char* sweep_config_json,
                            char** out_metrics_csv);

/* ------------------------------------------------------------------------
 * Optimality oracle: builds the quantized routing problem, solves it exactly,
 * trains a router on sampled one-hot codes and compares the two.
 *
 * config: {"quant_bins":8,"lambda":0.0,"seed":1,"num_experts":3,
 *          "episodes":4000,"num_train":4000,"num_test":1000,
 *          "obs_dim":32,"hidden":32,
 *          "class_separation":1.0,"latent_noise":1.0}
 * report: {"optimal_value":...,"learned_value":...,"ratio":...,"K":...,
 *          "lambda":...}
 * ---------------------------------------------------------------------- */

SRPMOE_API int srpmoe_oracle(const char* oracle_config_json, char** out_report_json);

/* Renders a metrics CSV (as produced by srpmoe_sweep) into an 800x600 SVG
 * scatter of avg TFLOPs vs test accuracy. */
SRPMOE_API int srpmoe_frontier_svg(const char* metrics_csv, char** out_svg);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* SRPMOE_SRPMOE_H */
