from keras.models import Sequential
from keras.layers import Conv2D, MaxPooling2D, AveragePooling2D, Flatten, Dense

small = Sequential()
small.add(Conv2D(8, (3, 3), activation='relu', input_shape=(32, 32, 1)))
small.add(MaxPooling2D((2, 2)))
small.add(Flatten())
small.add(Dense(4, activation='softmax'))
small.compile(optimizer='adam', loss='categorical_crossentropy')

pooled = Sequential()
pooled.add(Conv2D(8, (3, 3), activation='relu', input_shape=(32, 32, 1)))
pooled.add(AveragePooling2D((2, 2)))
pooled.add(Flatten())
pooled.add(Dense(4, activation='softmax'))
pooled.compile(optimizer='adam', loss='categorical_crossentropy')
