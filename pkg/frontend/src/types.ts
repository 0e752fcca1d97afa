// Wire types for the annotation API. By construction there is no field for
// method identity anywhere in these shapes: the server never sends it and
// the client has nothing to display.

export interface TaskItem {
  item_ref: number | null
  question: string
}

export interface AnnotationTask {
  task_id: string
  story_id: number
  dimension: string
  story_text: string
  rubric: string
  images: string[]
  items: TaskItem[]
}

export type RatingValue = number | 'yes' | 'no'

export interface RatingBody {
  annotator_id: string
  task_id: string
  dimension: string
  item_ref: number | null
  value: number | string
}

export const VQA_DIMENSION = 'narrative_causality_vqa'

export type SubmitStatus = 'created' | 'duplicate' | 'invalid' | 'network_error'

export interface SubmitResult {
  status: SubmitStatus
  errors?: { field: string; error: string }[]
}
