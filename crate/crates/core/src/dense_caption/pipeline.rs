use std::collections::BTreeSet;

use super::annotation::{BinaryMask, LikelihoodScore, ObjectAnnotation};
use super::clients::{LlmScorerClient, SegmenterClient, TaggerClient};
use super::protocol::{parse_scorer_response, TEMPLATE_VERSION};
use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::io::KvStore;
use crate::prompt::Prompt;
use crate::util::digest_parts;

/// The three external clients that produce annotations.
pub struct AnnotationClients<'a> {
    pub tagger: &'a dyn TaggerClient,
    pub scorer: &'a dyn LlmScorerClient,
    pub segmenter: &'a dyn SegmenterClient,
}

/// Cache key for a scorer reply.
pub fn scorer_cache_key(scorer_id: &str, prompt: &Prompt, tags: &[String]) -> String {
    let mut sorted: Vec<&str> = tags.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let mut parts = vec!["score", TEMPLATE_VERSION, scorer_id, prompt.text.as_str()];
    parts.extend(sorted);
    digest_parts(&parts)
}

fn scorer_reply(
    clients: &AnnotationClients<'_>,
    prompt: &Prompt,
    tags: &[String],
    cache: Option<&KvStore>,
) -> Result<String> {
    let key = cache.map(|_| scorer_cache_key(clients.scorer.id(), prompt, tags));
    if let (Some(c), Some(k)) = (cache, key.as_deref()) {
        if let Some(hit) = c.get(k) {
            return Ok(hit);
        }
    }
    let raw = clients.scorer.score(prompt, tags)?;
    parse_scorer_response(&raw, tags)?;
    if let (Some(c), Some(k)) = (cache, key.as_deref()) {
        c.put(k, &raw)?;
    }
    Ok(raw)
}

/// Recognises objects, scores and captions them, and segments the ones that
/// may appear. Annotations are ordered by descending score, then tag.
pub fn generate_annotations(
    image: &LatentImage,
    prompt: &Prompt,
    clients: &AnnotationClients<'_>,
    cache: Option<&KvStore>,
) -> Result<Vec<ObjectAnnotation>> {
    let mut seen = BTreeSet::new();
    let tags: Vec<String> = clients
        .tagger
        .tag(image)?
        .into_iter()
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty() && seen.insert(t.clone()))
        .collect();
    if tags.is_empty() {
        return Ok(Vec::new());
    }

    let raw = scorer_reply(clients, prompt, &tags, cache)?;
    let scored = parse_scorer_response(&raw, &tags)?;

    let (h, w) = image.spatial();
    let wanted: Vec<&String> = tags
        .iter()
        .filter(|t| scored[*t].score().is_positive())
        .collect();
    let masks: Vec<Result<BinaryMask>> = std::thread::scope(|s| {
        let handles: Vec<_> = wanted
            .iter()
            .map(|tag| s.spawn(move || clients.segmenter.segment(image, tag)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("segmenter thread panicked"))
            .collect()
    });

    let mut out: Vec<ObjectAnnotation> = Vec::with_capacity(tags.len());
    let mut masks = wanted.into_iter().zip(masks);
    for tag in &tags {
        let entry = &scored[tag];
        let score = entry.score();
        let (mask, warning) = if score.is_positive() {
            let (_, mask) = masks.next().expect("one mask per positive tag");
            let mask = mask?;
            if mask.dims() != (h, w) {
                return Err(Error::shape(
                    format!("segmenter mask for `{tag}`"),
                    &[h, w],
                    &[mask.height(), mask.width()],
                ));
            }
            let warning = mask
                .is_empty()
                .then(|| format!("segmenter returned an empty mask for `{tag}`"));
            (mask, warning)
        } else {
            (BinaryMask::empty(h, w), None)
        };
        if let Some(msg) = &warning {
            log::warn!("{msg}");
        }
        out.push(ObjectAnnotation {
            object_index: 0,
            tag: tag.clone(),
            local_caption: entry.caption.clone(),
            score,
            mask,
            warning,
        });
    }
    out.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.tag.cmp(&b.tag)));
    for (i, a) in out.iter_mut().enumerate() {
        a.object_index = i;
    }
    Ok(out)
}

/// Scores of the annotations keyed by tag, in tag order.
pub fn score_table(annotations: &[ObjectAnnotation]) -> Vec<(String, LikelihoodScore)> {
    let mut v: Vec<_> = annotations
        .iter()
        .map(|a| (a.tag.clone(), a.score))
        .collect();
    v.sort();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense_caption::{RuleScorer, StubSegmenter, StubTagger};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct CountingSegmenter {
        inner: StubSegmenter,
        calls: std::sync::Mutex<Vec<String>>,
    }

    impl SegmenterClient for CountingSegmenter {
        fn id(&self) -> &str {
            "counting"
        }
        fn segment(&self, image: &LatentImage, tag: &str) -> Result<BinaryMask> {
            self.calls.lock().unwrap().push(tag.to_string());
            self.inner.segment(image, tag)
        }
    }

    struct CountingScorer(RuleScorer, AtomicUsize);

    impl LlmScorerClient for CountingScorer {
        fn id(&self) -> &str {
            "counting-scorer"
        }
        fn score(&self, prompt: &Prompt, tags: &[String]) -> Result<String> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.score(prompt, tags)
        }
    }

    struct GarbageScorer;

    impl LlmScorerClient for GarbageScorer {
        fn id(&self) -> &str {
            "garbage"
        }
        fn score(&self, _: &Prompt, _: &[String]) -> Result<String> {
            Ok("I think the book is certain.".into())
        }
    }

    fn prompt() -> Prompt {
        Prompt::from_text("a red book and a yellow pen").unwrap()
    }

    #[test]
    fn example_pipeline() {
        let img = LatentImage::zeros([4, 8, 8]);
        let seg = CountingSegmenter {
            inner: StubSegmenter::default(),
            calls: Default::default(),
        };
        let tagger = StubTagger::fixed(["book", "banana", "desk"]);
        let clients = AnnotationClients {
            tagger: &tagger,
            scorer: &RuleScorer::default(),
            segmenter: &seg,
        };
        let a = generate_annotations(&img, &prompt(), &clients, None).unwrap();
        let order: Vec<_> = a
            .iter()
            .map(|x| (x.tag.as_str(), x.score.value()))
            .collect();
        assert_eq!(order, vec![("book", 2.0), ("desk", 0.5), ("banana", 0.0)]);
        let mut calls = seg.calls.lock().unwrap().clone();
        calls.sort();
        assert_eq!(calls, vec!["book", "desk"]);
        assert!(a[2].mask.is_empty());
        assert_eq!(a[0].local_caption, "a red book");
        for (i, x) in a.iter().enumerate() {
            assert_eq!(x.object_index, i);
            x.validate(8, 8).unwrap();
        }
        assert_eq!(
            a,
            generate_annotations(&img, &prompt(), &clients, None).unwrap()
        );
    }

    #[test]
    fn no_tags_no_calls() {
        let img = LatentImage::zeros([4, 8, 8]);
        let scorer = CountingScorer(RuleScorer::default(), AtomicUsize::new(0));
        let tagger = StubTagger::fixed(Vec::<String>::new());
        let clients = AnnotationClients {
            tagger: &tagger,
            scorer: &scorer,
            segmenter: &StubSegmenter::default(),
        };
        assert!(generate_annotations(&img, &prompt(), &clients, None)
            .unwrap()
            .is_empty());
        assert_eq!(scorer.1.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn empty_mask_for_certain_object_warns() {
        let img = LatentImage::zeros([4, 8, 8]);
        let tagger = StubTagger::fixed(["book"]);
        let clients = AnnotationClients {
            tagger: &tagger,
            scorer: &RuleScorer::default(),
            segmenter: &StubSegmenter::with_empty(["book"]),
        };
        let a = generate_annotations(&img, &prompt(), &clients, None).unwrap();
        assert!(a[0].mask.is_empty());
        assert!(a[0].warning.as_deref().unwrap().contains("book"));
    }

    #[test]
    fn unparseable_reply_keeps_payload() {
        let img = LatentImage::zeros([4, 8, 8]);
        let tagger = StubTagger::fixed(["book"]);
        let clients = AnnotationClients {
            tagger: &tagger,
            scorer: &GarbageScorer,
            segmenter: &StubSegmenter::default(),
        };
        match generate_annotations(&img, &prompt(), &clients, None) {
            Err(Error::Protocol { raw: Some(raw), .. }) => assert!(raw.contains("certain")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cached_replies_are_reused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("llm.jsonl");
        let img = LatentImage::zeros([4, 8, 8]);
        let scorer = CountingScorer(RuleScorer::default(), AtomicUsize::new(0));
        let tagger = StubTagger::fixed(["desk", "book"]);
        let clients = AnnotationClients {
            tagger: &tagger,
            scorer: &scorer,
            segmenter: &StubSegmenter::default(),
        };
        let first = {
            let cache = KvStore::open(&path).unwrap();
            generate_annotations(&img, &prompt(), &clients, Some(&cache)).unwrap()
        };
        let cache = KvStore::open(&path).unwrap();
        let second = generate_annotations(&img, &prompt(), &clients, Some(&cache)).unwrap();
        assert_eq!(scorer.1.load(Ordering::SeqCst), 1);
        assert_eq!(
            serde_json::to_string(&first).unwrap(),
            serde_json::to_string(&second).unwrap()
        );
    }
}
