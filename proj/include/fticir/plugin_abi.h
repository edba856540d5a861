/*
 * C ABI for external frozen backbones (backbone.name = plugin:<path>).
 *
 * All functions return 0 on success and nonzero on failure; the failure text
 * is then available from fticir_plugin_last_error. Matrices are row-major
 * float64. Token id sequences include the text tower's own begin/end markers.
 */
#ifndef FTICIR_PLUGIN_ABI_H
#define FTICIR_PLUGIN_ABI_H

#ifdef __cplusplus
extern "C" {
#endif

#define FTICIR_PLUGIN_ABI_VERSION 1

typedef struct fticir_plugin_dims_t {
    int d_embed;
    int d_patch;
    int m_patches;
    int d_token;
    int max_text_len;
} fticir_plugin_dims_t;

int fticir_plugin_abi_version(void);

/* `config_text` is the flat key-value configuration of the run. */
void* fticir_plugin_create(const char* config_text);
void fticir_plugin_destroy(void* ctx);
const char* fticir_plugin_last_error(void* ctx);

int fticir_plugin_dims(void* ctx, fticir_plugin_dims_t* out);

/* global_out: d_embed, patches_out: m_patches x d_patch. */
int fticir_plugin_encode_image(void* ctx, const unsigned char* rgb, int width, int height, double* global_out,
                               double* patches_out);

/* placeholder_out[i] is set to 1 where ids_out[i] is a pseudo-word placeholder. */
int fticir_plugin_tokenize(void* ctx, const char* utf8, int* ids_out, int* placeholder_out, int capacity,
                           int* count_out);

/* NUL-terminated text; returns nonzero if `capacity` is too small. */
int fticir_plugin_detokenize(void* ctx, const int* ids, int count, char* text_out, int capacity);

/* pseudo_vectors: pseudo_count x d_token. out: d_embed. */
int fticir_plugin_encode_text(void* ctx, const int* ids, int count, const int* pseudo_positions,
                              const double* pseudo_vectors, int pseudo_count, double* out);

/* Vector-Jacobian product of encode_text w.r.t. the pseudo vectors. */
int fticir_plugin_encode_text_vjp(void* ctx, const int* ids, int count, const int* pseudo_positions,
                                  const double* pseudo_vectors, int pseudo_count, const double* grad_out,
                                  double* grad_pseudo_out);

int fticir_plugin_fingerprint(void* ctx, unsigned long long* out);

#ifdef __cplusplus
}
#endif

#endif
