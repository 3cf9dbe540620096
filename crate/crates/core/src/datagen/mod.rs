//! Synthetic multi-modal, non-i.i.d., class-imbalanced subject data and the
//! deployment data-reduction filters.

mod profile;
mod select;
mod stream;

pub use profile::{identity_shift, random_shift, AffineShift, DomainShift, Group, SubjectProfile};
pub use select::{select_data, SelectionPolicy};
pub use stream::{
    activity_distribution, class_distribution, class_mass, generate_labeled_set, generate_selected_stream,
    generate_subject_stream, stream_to_jsonl, ClassDistribution, GeneratedStream, MultiModalSample, World,
    SAMPLE_PERIOD_S,
};
