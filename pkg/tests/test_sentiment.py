import pytest

from services import corpus_service, sentiment_service as ss
from services.errors import LexiconError


@pytest.fixture
def lexicon():
    return ss.Lexicon(entries={'good': 0.5, 'bad': -0.7, 'great': 0.8})


class TestScore:
    def test_mean_of_matched_terms(self, lexicon):
        result = ss.score(['good', 'oil', 'great'], lexicon, 't1')
        assert result.polarity == pytest.approx(0.65)
        assert result.matched_terms == 2
        assert result.tweet_id == 't1'

    def test_no_match_is_neutral(self, lexicon):
        result = ss.score(['oil', 'price'], lexicon)
        assert result.polarity == 0.0
        assert result.matched_terms == 0

    def test_negator_flips_next_term(self, lexicon):
        assert ss.score(['not', 'good'], lexicon).polarity == pytest.approx(-0.5)
        assert ss.score(['not', 'bad'], lexicon).polarity == pytest.approx(0.7)

    def test_negation_window(self, lexicon):
        # default window is the single preceding token
        assert ss.score(['not', 'very', 'good'], lexicon).polarity == pytest.approx(0.5)
        wide = ss.Lexicon(entries=lexicon.entries, negation_window=2)
        assert ss.score(['not', 'very', 'good'], wide).polarity == pytest.approx(-0.5)

    def test_polarity_stays_in_range(self):
        lexicon = ss.Lexicon(entries={'best': 1.0})
        assert ss.score(['best'] * 7, lexicon).polarity == 1.0


class TestLexicon:
    def test_rejects_out_of_range_polarity(self):
        with pytest.raises(LexiconError):
            ss.Lexicon(entries={'good': 1.5})

    def test_rejects_negator_overlap(self):
        with pytest.raises(LexiconError):
            ss.Lexicon(entries={'not': -0.1})

    def test_rejects_empty(self):
        with pytest.raises(LexiconError):
            ss.Lexicon(entries={})

    def test_load_shipped_lexicon(self):
        lexicon = ss.load_lexicon()
        assert lexicon.entries['good'] == pytest.approx(0.7)
        assert 'not' in lexicon.negators

    def test_load_with_negator_section_and_duplicates(self, tmp_path):
        path = tmp_path / 'lexicon.csv'
        path.write_text('term,polarity\ngood,0.5\nGood,0.6\nbad,-0.5\n[negators]\nhardly\n')
        lexicon = ss.load_lexicon(path)
        assert lexicon.entries == {'good': 0.6, 'bad': -0.5}
        assert lexicon.negators == frozenset({'hardly'})
        assert lexicon.duplicate_warnings == 1

    def test_explicit_negators_win(self, tmp_path):
        path = tmp_path / 'lexicon.csv'
        path.write_text('good,0.5\n[negators]\nhardly\n')
        assert ss.load_lexicon(path, negators=['never']).negators == frozenset({'never'})

    @pytest.mark.parametrize('body', ['good,abc\n', 'good,1.2\n', 'good\n'])
    def test_bad_rows(self, tmp_path, body):
        path = tmp_path / 'lexicon.csv'
        path.write_text(body)
        with pytest.raises(LexiconError):
            ss.load_lexicon(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(LexiconError):
            ss.load_lexicon(tmp_path / 'absent.csv')

    def test_read_negators(self, tmp_path):
        path = tmp_path / 'negators.txt'
        path.write_text('Not\n\nnever\n')
        assert ss.read_negators(path) == {'not', 'never'}


class TestScoreTweets:
    def test_negators_survive_stopword_removal(self, tweets_file):
        tweets = corpus_service.ingest_tweets(tweets_file).tweets
        stopwords = corpus_service.load_stopwords()
        assert 'not' in stopwords
        scores = ss.score_tweets(tweets, ss.load_lexicon(), stopwords)
        by_id = {s.tweet_id: s.polarity for s in scores}
        # conftest texts end in 'good' (i % 3 == 0) or 'not bad' (i % 3 == 1)
        assert by_id['0000'] == pytest.approx(0.7)
        assert by_id['0001'] == pytest.approx(0.7)
        assert by_id['0002'] == 0.0

    @pytest.mark.parametrize('text', ["oil is not good", "oil isn't good", "oil ISN'T good",
                                      "oil isn’t good", "oil wasn't good"])
    def test_contractions_negate_like_not(self, text):
        record = {'id': 't', 'created_at': '2021-08-23T00:00:00Z', 'text': text,
                  'likes': 0, 'retweets': 0, 'query': 'Oil Price'}
        tweet = corpus_service.parse_record(record)
        scores = ss.score_tweets([tweet], ss.load_lexicon(), corpus_service.load_stopwords())
        assert scores[0].polarity == pytest.approx(-0.7)

    def test_frame_round_trip(self, lexicon):
        scores = [ss.score(['good'], lexicon, 'a'), ss.score(['bad'], lexicon, 'b')]
        frame = ss.scores_frame(scores)
        assert list(frame.columns) == ['tweet_id', 'polarity', 'matched_terms']
        assert ss.scores_from_frame(frame) == {'a': 0.5, 'b': -0.7}
