/** Client-side training form validation mirroring the server's rules.
 * Returns one message per offending field so the form can annotate inputs;
 * an empty map means the payload is safe to submit.
 */

export interface TrainingFormValues {
  base_checkpoint_id: string;
  epochs: number;
  batch_size: number;
  learning_rate: number;
  lambda: number;
  seed: number;
  include_unannotated: boolean;
}

export function validateTrainingForm(values: TrainingFormValues): Map<string, string> {
  const errors = new Map<string, string>();
  if (!values.base_checkpoint_id) {
    errors.set("base_checkpoint_id", "choose a base checkpoint");
  }
  if (!Number.isInteger(values.epochs) || values.epochs < 1) {
    errors.set("epochs", "epochs must be an integer >= 1");
  }
  if (!Number.isInteger(values.batch_size) || values.batch_size < 1) {
    errors.set("batch_size", "batch size must be an integer >= 1");
  }
  if (!Number.isFinite(values.learning_rate) || values.learning_rate <= 0) {
    errors.set("learning_rate", "learning rate must be > 0");
  }
  if (!Number.isFinite(values.lambda) || values.lambda < 0) {
    errors.set("lambda", "lambda must be >= 0");
  }
  if (!Number.isInteger(values.seed) || values.seed < 0) {
    errors.set("seed", "seed must be a non-negative integer");
  }
  return errors;
}

export function trainingPayload(values: TrainingFormValues): Record<string, unknown> {
  return {
    base_checkpoint_id: values.base_checkpoint_id,
    epochs: values.epochs,
    batch_size: values.batch_size,
    learning_rate: values.learning_rate,
    lambda: values.lambda,
    noise: "uniform01",
    seed: values.seed,
    include_unannotated: values.include_unannotated,
  };
}
