//! Single-call comparison methods: Direct, CoT and SAVR. They share image
//! encoding and label matching with the pipeline; only the prompt differs.

use crate::backend::encode_image;
use crate::pipeline::{Classifier, PipelineError, TranscriptDraft};
use crate::prompts::{TemplateName, Vars};
use crate::types::{AgentRole, ImageSample, LabelSet, Method, Prediction, Transcript};

impl Classifier {
    pub async fn classify_direct(&self, sample: &ImageSample, labels: &LabelSet) -> Transcript {
        let mut t = TranscriptDraft::new(sample, Method::Direct, &self.settings().model);
        let result: Result<Prediction, PipelineError> = async {
            let image = encode_image(sample).map_err(PipelineError::Encode)?;
            let class_list = labels.class_list();
            let rendered = self.prompts().render(
                TemplateName::Direct,
                &Vars {
                    class_list: Some(&class_list),
                    ..Vars::default()
                },
            )?;
            let (prediction, call) = self
                .direct_stage(&rendered.system, &rendered.user, &image, labels)
                .await?;
            t.calls.push(call);
            Ok(prediction)
        }
        .await;
        t.finish(result)
    }

    pub async fn classify_cot(&self, sample: &ImageSample, labels: &LabelSet) -> Transcript {
        self.tagged_baseline(sample, labels, Method::Cot, TemplateName::Cot, AgentRole::Cot)
            .await
    }

    pub async fn classify_savr(&self, sample: &ImageSample, labels: &LabelSet) -> Transcript {
        self.tagged_baseline(sample, labels, Method::Savr, TemplateName::Savr, AgentRole::Savr)
            .await
    }

    async fn tagged_baseline(
        &self,
        sample: &ImageSample,
        labels: &LabelSet,
        method: Method,
        template: TemplateName,
        role: AgentRole,
    ) -> Transcript {
        let mut t = TranscriptDraft::new(sample, method, &self.settings().model);
        let result: Result<Prediction, PipelineError> = async {
            let image = encode_image(sample).map_err(PipelineError::Encode)?;
            let class_list = labels.class_list();
            let rendered = self.prompts().render(
                template,
                &Vars {
                    class_list: Some(&class_list),
                    ..Vars::default()
                },
            )?;
            let (prediction, call) = self
                .tagged_stage(role, &rendered.system, &rendered.user, Some(&image), labels)
                .await?;
            t.calls.push(call);
            Ok(prediction)
        }
        .await;
        t.finish(result)
    }
}
